#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mml/tensor.hpp"

namespace mml {

enum class HeadKind { kSoftmaxCe, kSigmoidBce };

// Tiny temporal-shift CNN: per-block (shift -> 3x3 conv -> batchnorm -> ReLU),
// stride-2 downsampling between blocks, global average pool over space and
// time, then a linear head.
struct ModelSpec {
  int input_channels = 3;
  int n_in = 8;
  int n_cls = 8;
  std::vector<int> widths = {16, 32, 64};
  double shift_fraction = 0.125;
  int kernel = 3;
  HeadKind head = HeadKind::kSoftmaxCe;

  void validate() const;  // throws std::invalid_argument
  int num_blocks() const { return static_cast<int>(widths.size()); }
  int feature_dim() const { return widths.back(); }
  int block_in_channels(int b) const {
    return b == 0 ? input_channels : widths[static_cast<size_t>(b - 1)];
  }
  int block_stride(int b) const { return b == 0 ? 1 : 2; }
  // The shift applies only where it splits channels exactly; with the default
  // 1/8 fraction that is every width-fed block but not the raw input.
  bool block_shifted(int b) const;

  bool operator==(const ModelSpec&) const = default;
};

// First floor(fraction*C) channels at time t come from t-1 (t=0 zero-filled),
// the next group from t+1 (last step zero-filled), remainder unchanged.
// fraction*C must be an integer.
Tensor temporal_shift(const Tensor& x, double fraction);
// Adjoint of temporal_shift (the transpose shift).
Tensor temporal_shift_backward(const Tensor& grad, double fraction);

// (name, shape) of every tensor a checkpoint for this spec must contain,
// in map order.
std::vector<std::pair<std::string, std::vector<int>>> expected_shapes(
    const ModelSpec& spec);

// Running statistics are buffers, not parameters.
bool is_trainable_param(const std::string& name);

// Seeded uniform fan-in init; gamma=1, beta=0, running stats (0, 1).
TensorMap init_weights(const ModelSpec& spec, uint64_t seed);

// [C,3,K,K] -> [C,n_target,K,K]: every target input slice is the mean of the
// three source slices.
Tensor adapt_first_conv(const Tensor& w, int n_target);

// Generalization to any source channel count (mean over source slices,
// replicated); equals adapt_first_conv for 3-channel sources.
Tensor adapt_input_channels(const Tensor& w, int n_target);

// Copies every tensor; adapts the first convolution when the input channel
// counts differ. Any other shape mismatch is an error.
TensorMap transfer_weights(const TensorMap& source, const ModelSpec& target_spec);

enum class NetMode { kTrain, kEval };

struct ForwardOut {
  std::vector<float> logits;
  std::vector<float> features;
};

// Activations cached by forward for the exact backward pass, plus the
// per-channel batch statistics the training loop folds into running stats.
struct BlockCache {
  Tensor conv_in;   // after shift (== block input when unshifted)
  Tensor xhat;      // normalized conv output
  Tensor act;       // ReLU output
  std::vector<float> istd;    // 1/sqrt(running_var+eps) used to normalize
  std::vector<double> mean;   // this sample's conv-output statistics
  std::vector<double> meansq;
};

struct Workspace {
  std::vector<BlockCache> blocks;
  std::vector<float> features;
};

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

// x is one sample, [n_in, input_channels, H, W]. The clip is its own batch:
// normalization uses the sample's (time x space) statistics in both modes,
// so outputs are a pure function of (weights, x) and evaluation matches
// training exactly. The running buffers in the weight map are training-loop
// state (frozen at evaluation) and never enter the normalization.
ForwardOut forward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, NetMode mode = NetMode::kEval,
                   Workspace* ws = nullptr);

// Exact gradients of (logits . dlogits + features . dfeatures) w.r.t. every
// trainable weight. ws must come from a train-mode forward on x.
TensorMap backward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, const Workspace& ws,
                   const std::vector<float>& dlogits,
                   const std::vector<float>* dfeatures = nullptr);

// Convenience overload that reruns forward internally.
TensorMap backward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, const std::vector<float>& dlogits,
                   const std::vector<float>* dfeatures = nullptr);

}  // namespace mml
