#include "mml/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mml/rng.hpp"

namespace mml {

namespace {

int shift_group(int channels, double fraction) {
  double g = fraction * channels;
  double r = std::round(g);
  if (std::abs(g - r) > 1e-9) return -1;  // non-integer split
  return static_cast<int>(r);
}

std::string block_prefix(int b) { return "block" + std::to_string(b) + "."; }

const Tensor& want(const TensorMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw std::invalid_argument("weights: missing tensor " + name);
  return it->second;
}

int conv_out_dim(int in, int k, int stride) {
  int pad = k / 2;
  return (in + 2 * pad - k) / stride + 1;
}

// out[t,co] += sum_{ci,ky,kx} w[co,ci,ky,kx] * in[t,ci, yo*s+ky-pad, xo*s+kx-pad]
void conv2d_forward(const float* in, int n, int ci_n, int h, int w,
                    const float* wt, int co_n, int k, int stride, float* out,
                    int ho, int wo) {
  const int pad = k / 2;
  std::fill(out, out + static_cast<size_t>(n) * co_n * ho * wo, 0.0f);
  for (int t = 0; t < n; ++t) {
    const float* in_t = in + static_cast<size_t>(t) * ci_n * h * w;
    float* out_t = out + static_cast<size_t>(t) * co_n * ho * wo;
    for (int co = 0; co < co_n; ++co) {
      float* op = out_t + static_cast<size_t>(co) * ho * wo;
      for (int ci = 0; ci < ci_n; ++ci) {
        const float* ip = in_t + static_cast<size_t>(ci) * h * w;
        const float* wp = wt + (static_cast<size_t>(co) * ci_n + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int yo_lo = pad - ky > 0 ? (pad - ky + stride - 1) / stride : 0;
          int yo_hi = std::min(ho - 1, (h - 1 - ky + pad) / stride);
          for (int kx = 0; kx < k; ++kx) {
            float wv = wp[ky * k + kx];
            int xo_lo = pad - kx > 0 ? (pad - kx + stride - 1) / stride : 0;
            int xo_hi = std::min(wo - 1, (w - 1 - kx + pad) / stride);
            for (int yo = yo_lo; yo <= yo_hi; ++yo) {
              const float* irow = ip + static_cast<size_t>(yo * stride + ky - pad) * w;
              float* orow = op + static_cast<size_t>(yo) * wo;
              for (int xo = xo_lo; xo <= xo_hi; ++xo)
                orow[xo] += wv * irow[xo * stride + kx - pad];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const float* in, int n, int ci_n, int h, int w,
                            const float* gout, int co_n, int k, int stride,
                            int ho, int wo, float* dw) {
  const int pad = k / 2;
  for (int co = 0; co < co_n; ++co)
    for (int ci = 0; ci < ci_n; ++ci)
      for (int ky = 0; ky < k; ++ky) {
        int yo_lo = pad - ky > 0 ? (pad - ky + stride - 1) / stride : 0;
        int yo_hi = std::min(ho - 1, (h - 1 - ky + pad) / stride);
        for (int kx = 0; kx < k; ++kx) {
          int xo_lo = pad - kx > 0 ? (pad - kx + stride - 1) / stride : 0;
          int xo_hi = std::min(wo - 1, (w - 1 - kx + pad) / stride);
          double acc = 0.0;
          for (int t = 0; t < n; ++t) {
            const float* ip = in + (static_cast<size_t>(t) * ci_n + ci) * h * w;
            const float* gp = gout + (static_cast<size_t>(t) * co_n + co) * ho * wo;
            for (int yo = yo_lo; yo <= yo_hi; ++yo) {
              const float* irow = ip + static_cast<size_t>(yo * stride + ky - pad) * w;
              const float* grow = gp + static_cast<size_t>(yo) * wo;
              for (int xo = xo_lo; xo <= xo_hi; ++xo)
                acc += static_cast<double>(grow[xo]) * irow[xo * stride + kx - pad];
            }
          }
          dw[(static_cast<size_t>(co) * ci_n + ci) * k * k + ky * k + kx] +=
              static_cast<float>(acc);
        }
      }
}

void conv2d_backward_input(const float* wt, int ci_n, int co_n, int k,
                           const float* gout, int n, int ho, int wo, int stride,
                           float* din, int h, int w) {
  const int pad = k / 2;
  std::fill(din, din + static_cast<size_t>(n) * ci_n * h * w, 0.0f);
  for (int t = 0; t < n; ++t) {
    const float* g_t = gout + static_cast<size_t>(t) * co_n * ho * wo;
    float* d_t = din + static_cast<size_t>(t) * ci_n * h * w;
    for (int co = 0; co < co_n; ++co) {
      const float* gp = g_t + static_cast<size_t>(co) * ho * wo;
      for (int ci = 0; ci < ci_n; ++ci) {
        float* dp = d_t + static_cast<size_t>(ci) * h * w;
        const float* wp = wt + (static_cast<size_t>(co) * ci_n + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int yo_lo = pad - ky > 0 ? (pad - ky + stride - 1) / stride : 0;
          int yo_hi = std::min(ho - 1, (h - 1 - ky + pad) / stride);
          for (int kx = 0; kx < k; ++kx) {
            float wv = wp[ky * k + kx];
            int xo_lo = pad - kx > 0 ? (pad - kx + stride - 1) / stride : 0;
            int xo_hi = std::min(wo - 1, (w - 1 - kx + pad) / stride);
            for (int yo = yo_lo; yo <= yo_hi; ++yo) {
              float* drow = dp + static_cast<size_t>(yo * stride + ky - pad) * w;
              const float* grow = gp + static_cast<size_t>(yo) * wo;
              for (int xo = xo_lo; xo <= xo_hi; ++xo)
                drow[xo * stride + kx - pad] += wv * grow[xo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void ModelSpec::validate() const {
  if (input_channels < 1) throw std::invalid_argument("model: input_channels < 1");
  if (n_in < 1) throw std::invalid_argument("model: n_in < 1");
  if (n_cls < 2) throw std::invalid_argument("model: n_cls < 2");
  if (widths.empty()) throw std::invalid_argument("model: no blocks");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("model: width <= 0");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("model: kernel must be odd");
  if (shift_fraction < 0.0 || shift_fraction > 0.5)
    throw std::invalid_argument("model: shift_fraction outside [0, 0.5]");
  for (size_t b = 1; b < widths.size(); ++b)
    if (shift_group(widths[b - 1], shift_fraction) < 0)
      throw std::invalid_argument(
          "model: shift_fraction * width must be an integer for every shifted block");
}

bool ModelSpec::block_shifted(int b) const {
  int g = shift_group(block_in_channels(b), shift_fraction);
  return g >= 1;
}

Tensor temporal_shift(const Tensor& x, double fraction) {
  if (x.shape.size() != 4)
    throw std::invalid_argument("temporal_shift: expected [N,C,h,w]");
  const int n = x.shape[0], c = x.shape[1];
  const size_t plane = static_cast<size_t>(x.shape[2]) * x.shape[3];
  int g = shift_group(c, fraction);
  if (g < 0) throw std::invalid_argument("temporal_shift: non-integer channel split");
  Tensor out = Tensor::zeros(x.shape);
  for (int t = 0; t < n; ++t) {
    const size_t base = static_cast<size_t>(t) * c * plane;
    // group 1: from the previous frame
    if (t >= 1)
      std::copy_n(x.data.begin() + static_cast<long>(base - c * plane),
                  static_cast<size_t>(g) * plane, out.data.begin() + static_cast<long>(base));
    // group 2: from the future frame
    if (t + 1 < n)
      std::copy_n(x.data.begin() + static_cast<long>(base + c * plane + g * plane),
                  static_cast<size_t>(g) * plane,
                  out.data.begin() + static_cast<long>(base + g * plane));
    // remainder unchanged
    std::copy_n(x.data.begin() + static_cast<long>(base + 2 * g * plane),
                static_cast<size_t>(c - 2 * g) * plane,
                out.data.begin() + static_cast<long>(base + 2 * g * plane));
  }
  return out;
}

Tensor temporal_shift_backward(const Tensor& grad, double fraction) {
  if (grad.shape.size() != 4)
    throw std::invalid_argument("temporal_shift_backward: expected [N,C,h,w]");
  const int n = grad.shape[0], c = grad.shape[1];
  const size_t plane = static_cast<size_t>(grad.shape[2]) * grad.shape[3];
  int g = shift_group(c, fraction);
  if (g < 0)
    throw std::invalid_argument("temporal_shift_backward: non-integer channel split");
  Tensor out = Tensor::zeros(grad.shape);
  for (int t = 0; t < n; ++t) {
    const size_t base = static_cast<size_t>(t) * c * plane;
    if (t + 1 < n)
      std::copy_n(grad.data.begin() + static_cast<long>(base + c * plane),
                  static_cast<size_t>(g) * plane, out.data.begin() + static_cast<long>(base));
    if (t >= 1)
      std::copy_n(grad.data.begin() + static_cast<long>(base - c * plane + g * plane),
                  static_cast<size_t>(g) * plane,
                  out.data.begin() + static_cast<long>(base + g * plane));
    std::copy_n(grad.data.begin() + static_cast<long>(base + 2 * g * plane),
                static_cast<size_t>(c - 2 * g) * plane,
                out.data.begin() + static_cast<long>(base + 2 * g * plane));
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<int>>> expected_shapes(
    const ModelSpec& spec) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  for (int b = 0; b < spec.num_blocks(); ++b) {
    std::string p = block_prefix(b);
    int cin = spec.block_in_channels(b);
    int cout = spec.widths[static_cast<size_t>(b)];
    out.emplace_back(p + "conv.weight",
                     std::vector<int>{cout, cin, spec.kernel, spec.kernel});
    out.emplace_back(p + "bn.gamma", std::vector<int>{cout});
    out.emplace_back(p + "bn.beta", std::vector<int>{cout});
    out.emplace_back(p + "bn.running_mean", std::vector<int>{cout});
    out.emplace_back(p + "bn.running_var", std::vector<int>{cout});
  }
  out.emplace_back("head.weight", std::vector<int>{spec.n_cls, spec.feature_dim()});
  out.emplace_back("head.bias", std::vector<int>{spec.n_cls});
  return out;
}

bool is_trainable_param(const std::string& name) {
  return name.find("running_") == std::string::npos;
}

TensorMap init_weights(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  TensorMap m;
  for (int b = 0; b < spec.num_blocks(); ++b) {
    std::string p = block_prefix(b);
    int cin = spec.block_in_channels(b);
    int cout = spec.widths[static_cast<size_t>(b)];
    Tensor w = Tensor::zeros({cout, cin, spec.kernel, spec.kernel});
    double bound = 1.0 / std::sqrt(static_cast<double>(cin) * spec.kernel * spec.kernel);
    for (float& v : w.data)
      v = static_cast<float>(rng.uniform_real(-bound, bound));
    m.emplace(p + "conv.weight", std::move(w));
    Tensor gamma = Tensor::zeros({cout});
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0f);
    m.emplace(p + "bn.gamma", std::move(gamma));
    m.emplace(p + "bn.beta", Tensor::zeros({cout}));
    m.emplace(p + "bn.running_mean", Tensor::zeros({cout}));
    Tensor rv = Tensor::zeros({cout});
    std::fill(rv.data.begin(), rv.data.end(), 1.0f);
    m.emplace(p + "bn.running_var", std::move(rv));
  }
  Tensor hw = Tensor::zeros({spec.n_cls, spec.feature_dim()});
  double bound = 1.0 / std::sqrt(static_cast<double>(spec.feature_dim()));
  for (float& v : hw.data)
    v = static_cast<float>(rng.uniform_real(-bound, bound));
  m.emplace("head.weight", std::move(hw));
  m.emplace("head.bias", Tensor::zeros({spec.n_cls}));
  return m;
}

Tensor adapt_input_channels(const Tensor& w, int n_target) {
  if (w.shape.size() != 4)
    throw std::invalid_argument("adapt_input_channels: expected [C,N,K,K]");
  if (n_target < 1) throw std::invalid_argument("adapt_input_channels: n_target < 1");
  const int cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3];
  Tensor out = Tensor::zeros({cout, n_target, kh, kw});
  const size_t kk = static_cast<size_t>(kh) * kw;
  for (int co = 0; co < cout; ++co) {
    std::vector<float> mean(kk, 0.0f);
    for (int ci = 0; ci < cin; ++ci) {
      const float* src = w.data.data() + (static_cast<size_t>(co) * cin + ci) * kk;
      for (size_t i = 0; i < kk; ++i) mean[i] += src[i];
    }
    for (size_t i = 0; i < kk; ++i) mean[i] /= static_cast<float>(cin);
    for (int ci = 0; ci < n_target; ++ci)
      std::copy(mean.begin(), mean.end(),
                out.data.begin() +
                    static_cast<long>((static_cast<size_t>(co) * n_target + ci) * kk));
  }
  return out;
}

Tensor adapt_first_conv(const Tensor& w, int n_target) {
  if (w.shape.size() != 4 || w.shape[1] != 3)
    throw std::invalid_argument("adapt_first_conv: source must have 3 input channels");
  return adapt_input_channels(w, n_target);
}

TensorMap transfer_weights(const TensorMap& source, const ModelSpec& target_spec) {
  target_spec.validate();
  auto expected = expected_shapes(target_spec);
  if (source.size() != expected.size())
    throw std::invalid_argument("transfer_weights: source entry count mismatch");
  TensorMap out;
  for (const auto& [name, shape] : expected) {
    auto it = source.find(name);
    if (it == source.end())
      throw std::invalid_argument("transfer_weights: source missing " + name);
    const Tensor& src = it->second;
    if (name == "block0.conv.weight" && src.shape.size() == 4 &&
        src.shape[1] != shape[1]) {
      if (src.shape[0] != shape[0] || src.shape[2] != shape[2] ||
          src.shape[3] != shape[3])
        throw std::invalid_argument("transfer_weights: first conv shape mismatch");
      out.emplace(name, adapt_input_channels(src, shape[1]));
    } else {
      if (src.shape != shape)
        throw std::invalid_argument("transfer_weights: shape mismatch for " + name);
      out.emplace(name, src);
    }
  }
  return out;
}

ForwardOut forward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, NetMode mode, Workspace* ws) {
  spec.validate();
  if (x.shape.size() != 4 || x.shape[0] != spec.n_in ||
      x.shape[1] != spec.input_channels)
    throw std::invalid_argument("forward: input must be [n_in, input_channels, H, W]");
  (void)mode;  // outputs are mode-independent; the trainer owns stat updates

  if (ws) ws->blocks.assign(static_cast<size_t>(spec.num_blocks()), BlockCache{});

  Tensor cur = x;
  int h = x.shape[2], w = x.shape[3];
  const int n = spec.n_in;
  for (int b = 0; b < spec.num_blocks(); ++b) {
    std::string p = block_prefix(b);
    const Tensor& cw = want(weights, p + "conv.weight");
    const Tensor& gamma = want(weights, p + "bn.gamma");
    const Tensor& beta = want(weights, p + "bn.beta");
    const int cin = spec.block_in_channels(b);
    const int cout = spec.widths[static_cast<size_t>(b)];
    if (cw.shape != std::vector<int>{cout, cin, spec.kernel, spec.kernel})
      throw std::invalid_argument("forward: bad shape for " + p + "conv.weight");

    Tensor shifted = spec.block_shifted(b) ? temporal_shift(cur, spec.shift_fraction)
                                           : std::move(cur);
    const int stride = spec.block_stride(b);
    const int ho = conv_out_dim(h, spec.kernel, stride);
    const int wo = conv_out_dim(w, spec.kernel, stride);
    Tensor z = Tensor::zeros({n, cout, ho, wo});
    conv2d_forward(shifted.data.data(), n, cin, h, w, cw.data.data(), cout,
                   spec.kernel, stride, z.data.data(), ho, wo);

    // Per-channel normalization over the clip's own (time x space) extent:
    // the per-sample forward makes the clip its whole batch, so the same
    // statistics apply in training and evaluation and outputs never depend
    // on batch composition. The running buffers are maintained by the
    // training loop as checkpoint state but do not enter the normalization.
    const size_t plane = static_cast<size_t>(ho) * wo;
    const double m_count = static_cast<double>(n) * plane;
    std::vector<float> istd(static_cast<size_t>(cout));
    std::vector<float> norm_mean(static_cast<size_t>(cout));
    std::vector<double> mean(static_cast<size_t>(cout)), meansq(static_cast<size_t>(cout));
    for (int c = 0; c < cout; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int t = 0; t < n; ++t) {
        const float* zp = z.data.data() + (static_cast<size_t>(t) * cout + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          s += zp[i];
          s2 += static_cast<double>(zp[i]) * zp[i];
        }
      }
      mean[static_cast<size_t>(c)] = s / m_count;
      meansq[static_cast<size_t>(c)] = s2 / m_count;
      double var = std::max(0.0, meansq[static_cast<size_t>(c)] -
                                     mean[static_cast<size_t>(c)] * mean[static_cast<size_t>(c)]);
      norm_mean[static_cast<size_t>(c)] = static_cast<float>(mean[static_cast<size_t>(c)]);
      istd[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
    }

    Tensor xhat = Tensor::zeros(z.shape);
    Tensor act = Tensor::zeros(z.shape);
    for (int t = 0; t < n; ++t)
      for (int c = 0; c < cout; ++c) {
        const size_t off = (static_cast<size_t>(t) * cout + c) * plane;
        const float mu = norm_mean[static_cast<size_t>(c)];
        const float is = istd[static_cast<size_t>(c)];
        const float g = gamma.data[static_cast<size_t>(c)];
        const float be = beta.data[static_cast<size_t>(c)];
        for (size_t i = 0; i < plane; ++i) {
          float xh = (z.data[off + i] - mu) * is;
          xhat.data[off + i] = xh;
          act.data[off + i] = std::max(g * xh + be, 0.0f);
        }
      }

    if (ws) {
      BlockCache& bc = ws->blocks[static_cast<size_t>(b)];
      bc.conv_in = shifted;
      bc.xhat = xhat;
      bc.istd = istd;
      bc.mean = mean;
      bc.meansq = meansq;
      bc.act = act;
    }
    cur = std::move(act);
    h = ho;
    w = wo;
  }

  // global average pool over time and space
  const int fdim = spec.feature_dim();
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<float> features(static_cast<size_t>(fdim), 0.0f);
  for (int c = 0; c < fdim; ++c) {
    double s = 0.0;
    for (int t = 0; t < n; ++t) {
      const float* ap = cur.data.data() + (static_cast<size_t>(t) * fdim + c) * plane;
      for (size_t i = 0; i < plane; ++i) s += ap[i];
    }
    features[static_cast<size_t>(c)] =
        static_cast<float>(s / (static_cast<double>(n) * plane));
  }

  const Tensor& hw = want(weights, "head.weight");
  const Tensor& hb = want(weights, "head.bias");
  if (hw.shape != std::vector<int>{spec.n_cls, fdim})
    throw std::invalid_argument("forward: bad head.weight shape");
  std::vector<float> logits(static_cast<size_t>(spec.n_cls));
  for (int k = 0; k < spec.n_cls; ++k) {
    double s = hb.data[static_cast<size_t>(k)];
    const float* wrow = hw.data.data() + static_cast<size_t>(k) * fdim;
    for (int f = 0; f < fdim; ++f) s += static_cast<double>(wrow[f]) * features[static_cast<size_t>(f)];
    logits[static_cast<size_t>(k)] = static_cast<float>(s);
  }

  if (ws) ws->features = features;
  return ForwardOut{std::move(logits), std::move(features)};
}

TensorMap backward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, const Workspace& ws,
                   const std::vector<float>& dlogits,
                   const std::vector<float>* dfeatures) {
  if (dlogits.size() != static_cast<size_t>(spec.n_cls))
    throw std::invalid_argument("backward: dlogits size mismatch");
  const int n = spec.n_in;
  const int fdim = spec.feature_dim();

  TensorMap grads;
  for (const auto& [name, shape] : expected_shapes(spec))
    if (is_trainable_param(name)) grads.emplace(name, Tensor::zeros(shape));

  // head
  const Tensor& hw = want(weights, "head.weight");
  Tensor& d_hw = grads.at("head.weight");
  Tensor& d_hb = grads.at("head.bias");
  std::vector<float> dfeat(static_cast<size_t>(fdim), 0.0f);
  for (int k = 0; k < spec.n_cls; ++k) {
    float g = dlogits[static_cast<size_t>(k)];
    d_hb.data[static_cast<size_t>(k)] += g;
    const float* wrow = hw.data.data() + static_cast<size_t>(k) * fdim;
    float* dwrow = d_hw.data.data() + static_cast<size_t>(k) * fdim;
    for (int f = 0; f < fdim; ++f) {
      dwrow[f] += g * ws.features[static_cast<size_t>(f)];
      dfeat[static_cast<size_t>(f)] += g * wrow[f];
    }
  }
  if (dfeatures) {
    if (dfeatures->size() != static_cast<size_t>(fdim))
      throw std::invalid_argument("backward: dfeatures size mismatch");
    for (int f = 0; f < fdim; ++f)
      dfeat[static_cast<size_t>(f)] += (*dfeatures)[static_cast<size_t>(f)];
  }

  // GAP
  const BlockCache& last = ws.blocks.back();
  const int lh = last.act.shape[2], lw = last.act.shape[3];
  const size_t lplane = static_cast<size_t>(lh) * lw;
  Tensor dact = Tensor::zeros(last.act.shape);
  const float inv_m = 1.0f / (static_cast<float>(n) * lplane);
  for (int t = 0; t < n; ++t)
    for (int c = 0; c < fdim; ++c) {
      float g = dfeat[static_cast<size_t>(c)] * inv_m;
      float* dp = dact.data.data() + (static_cast<size_t>(t) * fdim + c) * lplane;
      for (size_t i = 0; i < lplane; ++i) dp[i] = g;
    }

  for (int b = spec.num_blocks() - 1; b >= 0; --b) {
    const BlockCache& bc = ws.blocks[static_cast<size_t>(b)];
    std::string p = block_prefix(b);
    const Tensor& cw = want(weights, p + "conv.weight");
    const Tensor& gamma = want(weights, p + "bn.gamma");
    const int cout = spec.widths[static_cast<size_t>(b)];
    const int cin = spec.block_in_channels(b);
    const int ho = bc.act.shape[2], wo = bc.act.shape[3];
    const size_t plane = static_cast<size_t>(ho) * wo;

    // ReLU
    Tensor dy = Tensor::zeros(bc.act.shape);
    for (size_t i = 0; i < dy.data.size(); ++i)
      dy.data[i] = bc.act.data[i] > 0.0f ? dact.data[i] : 0.0f;

    // normalization backward: the statistics are functions of this sample's
    // conv output, so the exact gradient carries the centering terms
    Tensor& d_gamma = grads.at(p + "bn.gamma");
    Tensor& d_beta = grads.at(p + "bn.beta");
    Tensor dz = Tensor::zeros(dy.shape);
    const double m_count = static_cast<double>(n) * plane;
    for (int c = 0; c < cout; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (int t = 0; t < n; ++t) {
        const size_t off = (static_cast<size_t>(t) * cout + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          s1 += dy.data[off + i];
          s2 += static_cast<double>(dy.data[off + i]) * bc.xhat.data[off + i];
        }
      }
      d_beta.data[static_cast<size_t>(c)] += static_cast<float>(s1);
      d_gamma.data[static_cast<size_t>(c)] += static_cast<float>(s2);
      const float gi = gamma.data[static_cast<size_t>(c)] * bc.istd[static_cast<size_t>(c)];
      const float c1 = static_cast<float>(s1 / m_count);
      const float c2 = static_cast<float>(s2 / m_count);
      for (int t = 0; t < n; ++t) {
        const size_t off = (static_cast<size_t>(t) * cout + c) * plane;
        for (size_t i = 0; i < plane; ++i)
          dz.data[off + i] =
              gi * (dy.data[off + i] - c1 - bc.xhat.data[off + i] * c2);
      }
    }

    // conv
    const int h_in = bc.conv_in.shape[2], w_in = bc.conv_in.shape[3];
    Tensor& d_cw = grads.at(p + "conv.weight");
    conv2d_backward_weight(bc.conv_in.data.data(), n, cin, h_in, w_in,
                           dz.data.data(), cout, spec.kernel,
                           spec.block_stride(b), ho, wo, d_cw.data.data());
    if (b == 0) break;  // input gradient not needed
    Tensor din = Tensor::zeros(bc.conv_in.shape);
    conv2d_backward_input(cw.data.data(), cin, cout, spec.kernel, dz.data.data(),
                          n, ho, wo, spec.block_stride(b), din.data.data(), h_in,
                          w_in);
    dact = spec.block_shifted(b) ? temporal_shift_backward(din, spec.shift_fraction)
                                 : std::move(din);
  }
  (void)x;
  return grads;
}

TensorMap backward(const TensorMap& weights, const ModelSpec& spec,
                   const Tensor& x, const std::vector<float>& dlogits,
                   const std::vector<float>* dfeatures) {
  Workspace ws;
  forward(weights, spec, x, NetMode::kTrain, &ws);
  return backward(weights, spec, x, ws, dlogits, dfeatures);
}

}  // namespace mml
