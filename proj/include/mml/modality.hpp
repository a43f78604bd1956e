#pragma once

#include <string>
#include <vector>

#include "mml/synthvid.hpp"
#include "mml/tensor.hpp"

namespace mml {

enum class Modality { kRgb, kDiff, kFlow };

constexpr int channels_of(Modality m) {
  switch (m) {
    case Modality::kRgb: return 3;
    case Modality::kDiff: return 15;
    case Modality::kFlow: return 10;
  }
  return 0;
}

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Frames addressable by a model input index for this modality. Diff and Flow
// input-frames each consume a window of 6 RGB frames.
constexpr int modality_frame_count(Modality m, int t_total) {
  return m == Modality::kRgb ? t_total : t_total - 5;
}

struct FlowField {
  int height = 0, width = 0;
  std::vector<float> u, v;  // horizontal / vertical displacement, px

  static FlowField zeros(int h, int w) {
    FlowField f;
    f.height = h;
    f.width = w;
    f.u.assign(static_cast<size_t>(h) * w, 0.0f);
    f.v.assign(static_cast<size_t>(h) * w, 0.0f);
    return f;
  }
};

struct Tvl1Params {
  double lambda = 0.15;  // data term weight
  double theta = 0.3;    // coupling
  double tau = 0.25;     // dual time step
  int warps = 3;
  int scales = 3;
  double zoom = 0.5;
  int iterations = 30;
};

// A model-ready clip for one modality: data is [N_in x C x H x W].
struct ModalityTensor {
  Modality modality = Modality::kRgb;
  Tensor data;
};

// Flow displacement clip bound before the affine map onto [-1, 1].
constexpr double kFlowClipBound = 4.0;

// Luminance (Rec.601) of a [3 x H x W] frame.
Tensor luminance(const float* chw, int h, int w);

// 6 consecutive [3 x H x W] frames -> [15 x H x W]: differences
// frame[t+1] - frame[t] for t = 0..4, channel order preserved.
Tensor rgb_diff_frame(const std::vector<Tensor>& frames);

// Displacement from a to b, estimated by duality-based TV-L1 on a
// coarse-to-fine pyramid. Deterministic given params.
FlowField tvl1_flow(const Tensor& frame_a, const Tensor& frame_b,
                    const Tvl1Params& params = {});

// 5 consecutive flow fields -> [10 x H x W], channels (u0,v0,...,u4,v4),
// clipped to +-bound then mapped onto [-1, 1].
Tensor flow_input_frame(const std::vector<FlowField>& flows,
                        double bound = kFlowClipBound);

using ClipFlows = std::vector<FlowField>;  // t_total - 1 fields

ClipFlows compute_clip_flows(const VideoClip& clip, const Tvl1Params& params = {});

// Gathers N_in input-frames at the given modality indices. Flow requires the
// clip's precomputed flow fields.
ModalityTensor clip_to_modality(const VideoClip& clip, Modality modality,
                                const std::vector<int>& indices,
                                const ClipFlows* flows = nullptr,
                                double flow_bound = kFlowClipBound);

// Per-clip flow cache files (checkpoint container, single entry "flow" with
// shape [t_total-1, 2, H, W]).
void save_flow_cache(const ClipFlows& flows, const std::string& path);
ClipFlows load_flow_cache(const std::string& path);

// Loads or computes (and persists, when dir is non-empty) flows for every
// clip. Parallel across clips; one file per clip so writes never interleave.
std::vector<ClipFlows> ensure_flow_cache(const std::vector<VideoClip>& clips,
                                         const std::string& dir,
                                         const std::string& split_name,
                                         const Tvl1Params& params = {},
                                         int threads = 0);

}  // namespace mml
