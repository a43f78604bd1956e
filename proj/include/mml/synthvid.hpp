#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mml/rng.hpp"

namespace mml {

enum class LabelMode { kSingle, kMulti };

// Generator metadata kept in memory with each clip (never serialized).
// Tests use it to compare estimated flow against the true motion.
struct MotionMeta {
  int shape_kind = 0;  // 0 rectangle, 1 disc
  double cx0 = 0, cy0 = 0;
  double vx = 0, vy = 0;  // px/frame, y grows downward
  double half_w = 0, half_h = 0;
  int direction_cls = 0;
};

struct VideoClip {
  int clip_id = 0;
  int t_total = 0, height = 0, width = 0;
  std::vector<float> frames;        // [T][3][H][W], values in [0,1]
  int label = -1;                   // single-label mode
  std::vector<uint8_t> label_vec;   // multi-label mode
  MotionMeta motion;

  const float* frame(int t) const {
    return frames.data() + static_cast<size_t>(t) * 3 * height * width;
  }
  float* frame(int t) {
    return frames.data() + static_cast<size_t>(t) * 3 * height * width;
  }
};

struct DatasetConfig {
  int num_clips_train = 512;
  int num_clips_val = 128;
  int t_total = 16;
  int height = 32;
  int width = 32;
  int n_cls = 8;
  LabelMode mode = LabelMode::kSingle;
  double texture_noise = 0.02;
  uint64_t seed = 1;
  bool debug_static = false;  // zero-velocity control clips

  void validate() const;  // throws std::invalid_argument
};

struct Dataset {
  DatasetConfig config;
  std::vector<VideoClip> train;
  std::vector<VideoClip> val;
};

// Deterministic: the same config yields bit-identical pixels and labels.
// Single-label: class = motion direction (one of n_cls compass headings).
// Multi-label: bits for shape class (2) and direction class (n_cls - 2).
Dataset generate_dataset(const DatasetConfig& config);

// In multi-label mode the direction classes start at this bit offset.
constexpr int kMultiLabelShapeClasses = 2;

// Continuous 2-octave value noise in [-1, 1]; pure function of its inputs.
double value_noise(uint64_t seed, double x, double y);

// Mask of pixels strictly inside the shape at frame t (extents shrunk by
// erode_px), 1 byte per pixel, row-major H x W.
std::vector<uint8_t> interior_mask(const VideoClip& clip, int t, double erode_px);

// Dataset container: header (magic "MMLDATA1", version, mode, counts, dims),
// body (per clip T*3*H*W little-endian f32), then all labels.
void save_dataset_file(const std::vector<VideoClip>& clips,
                       const DatasetConfig& config, const std::string& path);
std::vector<VideoClip> load_dataset_file(const std::string& path,
                                         DatasetConfig* config_out = nullptr);

}  // namespace mml
