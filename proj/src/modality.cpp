#include "mml/modality.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mml/parallel.hpp"

namespace mml {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kRgb: return "rgb";
    case Modality::kDiff: return "diff";
    case Modality::kFlow: return "flow";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  if (name == "rgb") return Modality::kRgb;
  if (name == "diff") return Modality::kDiff;
  if (name == "flow") return Modality::kFlow;
  throw std::invalid_argument("unknown modality: " + name);
}

Tensor luminance(const float* chw, int h, int w) {
  Tensor out = Tensor::zeros({h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    out.data[i] = 0.299f * chw[i] + 0.587f * chw[plane + i] +
                  0.114f * chw[2 * plane + i];
  return out;
}

Tensor rgb_diff_frame(const std::vector<Tensor>& frames) {
  if (frames.size() != 6)
    throw std::invalid_argument("rgb_diff_frame: expected 6 frames");
  for (const Tensor& f : frames) {
    if (f.shape.size() != 3 || f.shape[0] != 3)
      throw std::invalid_argument("rgb_diff_frame: frames must be [3,H,W]");
    if (!f.same_shape(frames[0]))
      throw std::invalid_argument("rgb_diff_frame: frame shape mismatch");
  }
  int h = frames[0].shape[1], w = frames[0].shape[2];
  Tensor out = Tensor::zeros({15, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int t = 0; t < 5; ++t)
    for (size_t i = 0; i < 3 * plane; ++i)
      out.data[t * 3 * plane + i] = frames[t + 1].data[i] - frames[t].data[i];
  return out;
}

namespace {

// --- small image helpers on [H,W] float grids -------------------------------

struct Grid {
  int h = 0, w = 0;
  std::vector<float> v;
  Grid() = default;
  Grid(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0f) {}
  float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

float sample_bilinear(const Grid& g, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(g.w - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(g.h - 1));
  int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  int x1 = std::min(x0 + 1, g.w - 1), y1 = std::min(y0 + 1, g.h - 1);
  float fx = x - x0, fy = y - y0;
  float a = g.at(y0, x0) + fx * (g.at(y0, x1) - g.at(y0, x0));
  float b = g.at(y1, x0) + fx * (g.at(y1, x1) - g.at(y1, x0));
  return a + fy * (b - a);
}

Grid gaussian_blur(const Grid& in, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<float> k(static_cast<size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = 0; i <= radius; ++i) {
    k[static_cast<size_t>(i)] =
        static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += (i == 0 ? 1.0 : 2.0) * k[static_cast<size_t>(i)];
  }
  for (auto& x : k) x = static_cast<float>(x / sum);

  Grid tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = k[0] * in.at(y, x);
      for (int i = 1; i <= radius; ++i)
        acc += k[static_cast<size_t>(i)] *
               (in.at(y, std::max(x - i, 0)) + in.at(y, std::min(x + i, in.w - 1)));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = k[0] * tmp.at(y, x);
      for (int i = 1; i <= radius; ++i)
        acc += k[static_cast<size_t>(i)] *
               (tmp.at(std::max(y - i, 0), x) + tmp.at(std::min(y + i, in.h - 1), x));
      out.at(y, x) = acc;
    }
  return out;
}

Grid resize_bilinear(const Grid& in, int h, int w) {
  Grid out(h, w);
  float sy = static_cast<float>(in.h) / h, sx = static_cast<float>(in.w) / w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = sample_bilinear(in, (x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
  return out;
}

Grid zoom_out(const Grid& in, double zoom) {
  int h = std::max(2, static_cast<int>(std::lround(in.h * zoom)));
  int w = std::max(2, static_cast<int>(std::lround(in.w * zoom)));
  return resize_bilinear(gaussian_blur(in, 0.8), h, w);
}

void centered_gradient(const Grid& in, Grid& gx, Grid& gy) {
  gx = Grid(in.h, in.w);
  gy = Grid(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      int xm = std::max(x - 1, 0), xp = std::min(x + 1, in.w - 1);
      int ym = std::max(y - 1, 0), yp = std::min(y + 1, in.h - 1);
      gx.at(y, x) = 0.5f * (in.at(y, xp) - in.at(y, xm));
      gy.at(y, x) = 0.5f * (in.at(yp, x) - in.at(ym, x));
    }
}

// One pyramid level of the duality-based TV-L1 solver. u, v are updated in
// place; the dual variables restart at zero on each level.
void tvl1_level(const Grid& i0, const Grid& i1, Grid& u, Grid& v,
                const Tvl1Params& prm) {
  const int h = i0.h, w = i0.w;
  const float l_t = static_cast<float>(prm.lambda * prm.theta);
  const float taut = static_cast<float>(prm.tau / prm.theta);
  const float theta = static_cast<float>(prm.theta);

  Grid i1x, i1y;
  centered_gradient(i1, i1x, i1y);

  Grid p11(h, w), p12(h, w), p21(h, w), p22(h, w);
  Grid i1w(h, w), i1wx(h, w), i1wy(h, w), grad(h, w), rho_c(h, w);
  Grid div1(h, w), div2(h, w);

  for (int warp = 0; warp < prm.warps; ++warp) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float X = x + u.at(y, x), Y = y + v.at(y, x);
        i1w.at(y, x) = sample_bilinear(i1, X, Y);
        i1wx.at(y, x) = sample_bilinear(i1x, X, Y);
        i1wy.at(y, x) = sample_bilinear(i1y, X, Y);
        grad.at(y, x) = i1wx.at(y, x) * i1wx.at(y, x) + i1wy.at(y, x) * i1wy.at(y, x);
        // Linearized residual constant: uses the flow the warp was taken at.
        rho_c.at(y, x) = i1w.at(y, x) - i1wx.at(y, x) * u.at(y, x) -
                         i1wy.at(y, x) * v.at(y, x) - i0.at(y, x);
      }

    for (int it = 0; it < prm.iterations; ++it) {
      // divergence of the dual fields (adjoint of forward differences)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float d1 = p11.at(y, x) - (x > 0 ? p11.at(y, x - 1) : 0.0f);
          float d2 = p12.at(y, x) - (y > 0 ? p12.at(y - 1, x) : 0.0f);
          div1.at(y, x) = d1 + d2;
          float e1 = p21.at(y, x) - (x > 0 ? p21.at(y, x - 1) : 0.0f);
          float e2 = p22.at(y, x) - (y > 0 ? p22.at(y - 1, x) : 0.0f);
          div2.at(y, x) = e1 + e2;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float rho = rho_c.at(y, x) + i1wx.at(y, x) * u.at(y, x) +
                      i1wy.at(y, x) * v.at(y, x);
          float g = grad.at(y, x);
          float du, dv;
          if (rho < -l_t * g) {
            du = l_t * i1wx.at(y, x);
            dv = l_t * i1wy.at(y, x);
          } else if (rho > l_t * g) {
            du = -l_t * i1wx.at(y, x);
            dv = -l_t * i1wy.at(y, x);
          } else if (g > 1e-10f) {
            du = -rho * i1wx.at(y, x) / g;
            dv = -rho * i1wy.at(y, x) / g;
          } else {
            du = dv = 0.0f;
          }
          u.at(y, x) = u.at(y, x) + du + theta * div1.at(y, x);
          v.at(y, x) = v.at(y, x) + dv + theta * div2.at(y, x);
        }
      // dual ascent on forward gradients of the updated flow
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float ux = x < w - 1 ? u.at(y, x + 1) - u.at(y, x) : 0.0f;
          float uy = y < h - 1 ? u.at(y + 1, x) - u.at(y, x) : 0.0f;
          float vx = x < w - 1 ? v.at(y, x + 1) - v.at(y, x) : 0.0f;
          float vy = y < h - 1 ? v.at(y + 1, x) - v.at(y, x) : 0.0f;
          float ng1 = 1.0f + taut * std::sqrt(ux * ux + uy * uy);
          float ng2 = 1.0f + taut * std::sqrt(vx * vx + vy * vy);
          p11.at(y, x) = (p11.at(y, x) + taut * ux) / ng1;
          p12.at(y, x) = (p12.at(y, x) + taut * uy) / ng1;
          p21.at(y, x) = (p21.at(y, x) + taut * vx) / ng2;
          p22.at(y, x) = (p22.at(y, x) + taut * vy) / ng2;
        }
    }
  }
}

}  // namespace

FlowField tvl1_flow(const Tensor& frame_a, const Tensor& frame_b,
                    const Tvl1Params& params) {
  if (frame_a.shape.size() != 2 || !frame_a.same_shape(frame_b))
    throw std::invalid_argument("tvl1_flow: frames must be [H,W] and equal shape");
  if (!frame_a.all_finite() || !frame_b.all_finite())
    throw std::invalid_argument("tvl1_flow: non-finite input pixels");
  const int h = frame_a.shape[0], w = frame_a.shape[1];

  // Work at the conventional 0..255 intensity scale so the lambda default
  // balances data and smoothness terms as usual.
  Grid g0(h, w), g1(h, w);
  for (size_t i = 0; i < g0.v.size(); ++i) {
    g0.v[i] = frame_a.data[i] * 255.0f;
    g1.v[i] = frame_b.data[i] * 255.0f;
  }

  int n_scales = 1;
  {
    double dim = std::min(h, w);
    while (n_scales < params.scales && dim * params.zoom >= 12.0) {
      dim *= params.zoom;
      ++n_scales;
    }
  }
  std::vector<Grid> pyr0(static_cast<size_t>(n_scales));
  std::vector<Grid> pyr1(static_cast<size_t>(n_scales));
  pyr0[0] = std::move(g0);
  pyr1[0] = std::move(g1);
  for (int s = 1; s < n_scales; ++s) {
    pyr0[static_cast<size_t>(s)] = zoom_out(pyr0[static_cast<size_t>(s - 1)], params.zoom);
    pyr1[static_cast<size_t>(s)] = zoom_out(pyr1[static_cast<size_t>(s - 1)], params.zoom);
  }

  Grid u(pyr0.back().h, pyr0.back().w), v(pyr0.back().h, pyr0.back().w);
  for (int s = n_scales - 1; s >= 0; --s) {
    const Grid& i0 = pyr0[static_cast<size_t>(s)];
    const Grid& i1 = pyr1[static_cast<size_t>(s)];
    tvl1_level(i0, i1, u, v, params);
    if (s > 0) {
      const Grid& nxt = pyr0[static_cast<size_t>(s - 1)];
      float fx = static_cast<float>(nxt.w) / i0.w;
      float fy = static_cast<float>(nxt.h) / i0.h;
      Grid u2 = resize_bilinear(u, nxt.h, nxt.w);
      Grid v2 = resize_bilinear(v, nxt.h, nxt.w);
      for (auto& x : u2.v) x *= fx;
      for (auto& x : v2.v) x *= fy;
      u = std::move(u2);
      v = std::move(v2);
    }
  }

  FlowField out;
  out.height = h;
  out.width = w;
  out.u = std::move(u.v);
  out.v = std::move(v.v);
  return out;
}

Tensor flow_input_frame(const std::vector<FlowField>& flows, double bound) {
  if (flows.size() != 5)
    throw std::invalid_argument("flow_input_frame: expected 5 flow fields");
  int h = flows[0].height, w = flows[0].width;
  for (const FlowField& f : flows)
    if (f.height != h || f.width != w)
      throw std::invalid_argument("flow_input_frame: field shape mismatch");
  Tensor out = Tensor::zeros({10, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  const float inv = static_cast<float>(1.0 / bound);
  for (int t = 0; t < 5; ++t) {
    const auto& f = flows[static_cast<size_t>(t)];
    for (size_t i = 0; i < plane; ++i) {
      float cu = std::clamp(f.u[i], static_cast<float>(-bound), static_cast<float>(bound));
      float cv = std::clamp(f.v[i], static_cast<float>(-bound), static_cast<float>(bound));
      out.data[(2 * t) * plane + i] = cu * inv;
      out.data[(2 * t + 1) * plane + i] = cv * inv;
    }
  }
  return out;
}

ClipFlows compute_clip_flows(const VideoClip& clip, const Tvl1Params& params) {
  ClipFlows flows;
  flows.reserve(static_cast<size_t>(clip.t_total - 1));
  Tensor prev = luminance(clip.frame(0), clip.height, clip.width);
  for (int t = 0; t + 1 < clip.t_total; ++t) {
    Tensor next = luminance(clip.frame(t + 1), clip.height, clip.width);
    flows.push_back(tvl1_flow(prev, next, params));
    prev = std::move(next);
  }
  return flows;
}

ModalityTensor clip_to_modality(const VideoClip& clip, Modality modality,
                                const std::vector<int>& indices,
                                const ClipFlows* flows, double flow_bound) {
  const int h = clip.height, w = clip.width;
  const int n_in = static_cast<int>(indices.size());
  const int limit = modality_frame_count(modality, clip.t_total);
  for (int idx : indices)
    if (idx < 0 || idx >= limit)
      throw std::out_of_range("clip_to_modality: index " + std::to_string(idx) +
                              " outside modality range [0," +
                              std::to_string(limit - 1) + "]");

  ModalityTensor mt;
  mt.modality = modality;
  const int c = channels_of(modality);
  mt.data = Tensor::zeros({n_in, c, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  const size_t step = static_cast<size_t>(c) * plane;

  for (int k = 0; k < n_in; ++k) {
    int i = indices[static_cast<size_t>(k)];
    float* dst = mt.data.data.data() + static_cast<size_t>(k) * step;
    switch (modality) {
      case Modality::kRgb:
        std::copy_n(clip.frame(i), step, dst);
        break;
      case Modality::kDiff:
        for (int t = 0; t < 5; ++t) {
          const float* a = clip.frame(i + t);
          const float* b = clip.frame(i + t + 1);
          for (size_t j = 0; j < 3 * plane; ++j)
            dst[t * 3 * plane + j] = b[j] - a[j];
        }
        break;
      case Modality::kFlow: {
        if (!flows)
          throw std::invalid_argument("clip_to_modality: flow modality needs flows");
        std::vector<FlowField> window(flows->begin() + i, flows->begin() + i + 5);
        Tensor f = flow_input_frame(window, flow_bound);
        std::copy(f.data.begin(), f.data.end(), dst);
        break;
      }
    }
  }
  return mt;
}

void save_flow_cache(const ClipFlows& flows, const std::string& path) {
  if (flows.empty()) throw std::invalid_argument("save_flow_cache: empty flows");
  int h = flows[0].height, w = flows[0].width;
  Tensor t = Tensor::zeros({static_cast<int>(flows.size()), 2, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < flows.size(); ++i) {
    std::copy(flows[i].u.begin(), flows[i].u.end(),
              t.data.begin() + static_cast<long>(i * 2 * plane));
    std::copy(flows[i].v.begin(), flows[i].v.end(),
              t.data.begin() + static_cast<long>(i * 2 * plane + plane));
  }
  TensorMap m;
  m.emplace("flow", std::move(t));
  save_tensor_map(m, path);
}

ClipFlows load_flow_cache(const std::string& path) {
  TensorMap m = load_tensor_map(path);
  auto it = m.find("flow");
  if (it == m.end() || it->second.shape.size() != 4 || it->second.shape[1] != 2)
    throw std::runtime_error("flow cache: missing or malformed 'flow' entry in " + path);
  const Tensor& t = it->second;
  int n = t.shape[0], h = t.shape[2], w = t.shape[3];
  const size_t plane = static_cast<size_t>(h) * w;
  ClipFlows flows(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    FlowField f = FlowField::zeros(h, w);
    std::copy_n(t.data.begin() + static_cast<long>(i * 2 * plane), plane, f.u.begin());
    std::copy_n(t.data.begin() + static_cast<long>(i * 2 * plane + plane), plane,
                f.v.begin());
    flows[static_cast<size_t>(i)] = std::move(f);
  }
  return flows;
}

std::vector<ClipFlows> ensure_flow_cache(const std::vector<VideoClip>& clips,
                                         const std::string& dir,
                                         const std::string& split_name,
                                         const Tvl1Params& params, int threads) {
  namespace fs = std::filesystem;
  if (!dir.empty()) fs::create_directories(dir);
  std::vector<ClipFlows> all(clips.size());
  parallel_for(static_cast<int>(clips.size()), threads, [&](int i) {
    std::string path;
    if (!dir.empty()) {
      path = dir + "/" + split_name + "_" + std::to_string(clips[static_cast<size_t>(i)].clip_id) + ".flow";
      if (fs::exists(path)) {
        all[static_cast<size_t>(i)] = load_flow_cache(path);
        return;
      }
    }
    all[static_cast<size_t>(i)] = compute_clip_flows(clips[static_cast<size_t>(i)], params);
    if (!dir.empty()) save_flow_cache(all[static_cast<size_t>(i)], path);
  });
  return all;
}

}  // namespace mml
