#include "mml/synthvid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mml {

namespace {

constexpr double kPi = 3.14159265358979323846;

double lattice_value(uint64_t seed, int64_t ix, int64_t iy) {
  uint64_t h = mix_seed(seed ^ mix_seed(static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ull ^
                                        static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4full));
  return (h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice_noise(uint64_t seed, double x, double y) {
  double fx = std::floor(x), fy = std::floor(y);
  auto ix = static_cast<int64_t>(fx);
  auto iy = static_cast<int64_t>(fy);
  double tx = smooth(x - fx), ty = smooth(y - fy);
  double v00 = lattice_value(seed, ix, iy);
  double v10 = lattice_value(seed, ix + 1, iy);
  double v01 = lattice_value(seed, ix, iy + 1);
  double v11 = lattice_value(seed, ix + 1, iy + 1);
  double a = v00 + (v10 - v00) * tx;
  double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

struct ClipParams {
  MotionMeta motion;
  double shape_col[3];
  double bg_col[3];
  uint64_t shape_tex_seed;
  uint64_t bg_tex_seed;
  uint64_t pixel_noise_seed;
};

double luma(const double c[3]) {
  return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
}

ClipParams draw_clip_params(const DatasetConfig& cfg, Rng& rng, int shape_kind,
                            int direction_cls, int n_dir) {
  ClipParams p;
  p.motion.shape_kind = shape_kind;
  p.motion.direction_cls = direction_cls;

  double m = std::min(cfg.height, cfg.width);
  p.motion.half_w = std::max(2.0, rng.uniform_real(0.12, 0.20) * m);
  p.motion.half_h = (shape_kind == 1)
                        ? p.motion.half_w  // disc radius
                        : std::max(2.0, rng.uniform_real(0.12, 0.20) * m);

  double theta = 2.0 * kPi * direction_cls / n_dir;
  double speed = rng.uniform_real(1.0, 2.0);
  double span_t = std::max(1, cfg.t_total - 1);
  double cx = std::cos(theta), sy = std::sin(theta);
  // Shrink the speed until the whole trajectory fits with a 1px border.
  double room_x = cfg.width - 2.0 - 2.0 * p.motion.half_w;
  double room_y = cfg.height - 2.0 - 2.0 * p.motion.half_h;
  if (std::abs(cx) > 1e-12) speed = std::min(speed, room_x / (std::abs(cx) * span_t));
  if (std::abs(sy) > 1e-12) speed = std::min(speed, room_y / (std::abs(sy) * span_t));
  speed = std::max(speed, 0.25);
  if (cfg.debug_static) speed = 0.0;
  p.motion.vx = speed * cx;
  p.motion.vy = speed * sy;

  double dx = p.motion.vx * span_t, dy = p.motion.vy * span_t;
  double x_lo = 1.0 + p.motion.half_w + std::max(0.0, -dx);
  double x_hi = cfg.width - 2.0 - p.motion.half_w - std::max(0.0, dx);
  double y_lo = 1.0 + p.motion.half_h + std::max(0.0, -dy);
  double y_hi = cfg.height - 2.0 - p.motion.half_h - std::max(0.0, dy);
  p.motion.cx0 = x_hi > x_lo ? rng.uniform_real(x_lo, x_hi) : 0.5 * (x_lo + x_hi);
  p.motion.cy0 = y_hi > y_lo ? rng.uniform_real(y_lo, y_hi) : 0.5 * (y_lo + y_hi);

  // Per-channel base colors with a guaranteed luminance gap so the shape is
  // visible against the background regardless of the texture draw.
  for (int tries = 0;; ++tries) {
    for (double& c : p.shape_col) c = rng.uniform_real(0.25, 0.95);
    for (double& c : p.bg_col) c = rng.uniform_real(0.05, 0.75);
    if (std::abs(luma(p.shape_col) - luma(p.bg_col)) >= 0.2 || tries > 32) break;
  }
  p.shape_tex_seed = rng.next_u64();
  p.bg_tex_seed = rng.next_u64();
  p.pixel_noise_seed = rng.next_u64();
  return p;
}

constexpr double kTexAmp = 0.22;

void render_clip(const DatasetConfig& cfg, const ClipParams& p, VideoClip& clip) {
  const int H = cfg.height, W = cfg.width, T = cfg.t_total;
  clip.t_total = T;
  clip.height = H;
  clip.width = W;
  clip.motion = p.motion;
  clip.frames.assign(static_cast<size_t>(T) * 3 * H * W, 0.0f);

  // Static background, rendered once.
  std::vector<double> bg(static_cast<size_t>(3) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double n = value_noise(p.bg_tex_seed, x, y);
      for (int c = 0; c < 3; ++c)
        bg[static_cast<size_t>(c) * H * W + y * W + x] =
            std::clamp(p.bg_col[c] + kTexAmp * n, 0.0, 1.0);
    }

  Rng noise_rng(p.pixel_noise_seed);
  for (int t = 0; t < T; ++t) {
    double cx = p.motion.cx0 + p.motion.vx * t;
    double cy = p.motion.cy0 + p.motion.vy * t;
    float* fr = clip.frame(t);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double lx = x - cx, ly = y - cy;
        double alpha;
        if (p.motion.shape_kind == 0) {
          double ax = std::clamp(p.motion.half_w - std::abs(lx) + 0.5, 0.0, 1.0);
          double ay = std::clamp(p.motion.half_h - std::abs(ly) + 0.5, 0.0, 1.0);
          alpha = ax * ay;
        } else {
          double r = std::sqrt(lx * lx + ly * ly);
          alpha = std::clamp(p.motion.half_w - r + 0.5, 0.0, 1.0);
        }
        double tex = alpha > 0.0 ? value_noise(p.shape_tex_seed, lx, ly) : 0.0;
        for (int c = 0; c < 3; ++c) {
          double base = bg[static_cast<size_t>(c) * H * W + y * W + x];
          double shp = std::clamp(p.shape_col[c] + kTexAmp * tex, 0.0, 1.0);
          double v = base * (1.0 - alpha) + shp * alpha;
          if (cfg.texture_noise > 0.0)
            v += cfg.texture_noise * noise_rng.normal();
          fr[static_cast<size_t>(c) * H * W + y * W + x] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
}

VideoClip make_clip(const DatasetConfig& cfg, uint64_t split_tag, int index,
                    int clip_id) {
  Rng rng(derive_seed(cfg.seed, split_tag, static_cast<uint64_t>(index)));
  int n_dir = cfg.mode == LabelMode::kSingle ? cfg.n_cls
                                             : cfg.n_cls - kMultiLabelShapeClasses;
  int shape_kind, direction;
  VideoClip clip;
  clip.clip_id = clip_id;
  if (cfg.mode == LabelMode::kSingle) {
    // Exact class balance by round-robin; shape and texture stay random so
    // appearance alone is only weakly informative.
    direction = index % n_dir;
    shape_kind = rng.coin() ? 1 : 0;
    clip.label = direction;
  } else {
    int pair = index % (kMultiLabelShapeClasses * n_dir);
    shape_kind = pair % kMultiLabelShapeClasses;
    direction = pair / kMultiLabelShapeClasses;
    clip.label_vec.assign(static_cast<size_t>(cfg.n_cls), 0);
    clip.label_vec[static_cast<size_t>(shape_kind)] = 1;
    clip.label_vec[static_cast<size_t>(kMultiLabelShapeClasses + direction)] = 1;
  }
  ClipParams params = draw_clip_params(cfg, rng, shape_kind, direction, n_dir);
  render_clip(cfg, params, clip);
  return clip;
}

}  // namespace

double value_noise(uint64_t seed, double x, double y) {
  return 0.7 * lattice_noise(seed, x / 5.0, y / 5.0) +
         0.3 * lattice_noise(seed ^ 0x517cc1b727220a95ull, x / 2.3, y / 2.3);
}

void DatasetConfig::validate() const {
  if (num_clips_train <= 0 || num_clips_val <= 0)
    throw std::invalid_argument("dataset: clip counts must be > 0");
  if (height < 16 || width < 16)
    throw std::invalid_argument("dataset: H and W must be >= 16");
  if (t_total < 2) throw std::invalid_argument("dataset: t_total must be >= 2");
  if (n_cls < 2) throw std::invalid_argument("dataset: n_cls must be >= 2");
  if (mode == LabelMode::kSingle && n_cls > 16)
    throw std::invalid_argument("dataset: single-label n_cls must be <= 16");
  if (mode == LabelMode::kMulti && n_cls < kMultiLabelShapeClasses + 2)
    throw std::invalid_argument("dataset: multi-label n_cls must be >= 4");
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.train.reserve(static_cast<size_t>(config.num_clips_train));
  ds.val.reserve(static_cast<size_t>(config.num_clips_val));
  for (int i = 0; i < config.num_clips_train; ++i)
    ds.train.push_back(make_clip(config, 0x7261696eull /*"rain"*/, i, i));
  for (int i = 0; i < config.num_clips_val; ++i)
    ds.val.push_back(make_clip(config, 0x76616cull /*"val"*/, i,
                               config.num_clips_train + i));
  return ds;
}

std::vector<uint8_t> interior_mask(const VideoClip& clip, int t, double erode_px) {
  const MotionMeta& m = clip.motion;
  double cx = m.cx0 + m.vx * t;
  double cy = m.cy0 + m.vy * t;
  std::vector<uint8_t> mask(static_cast<size_t>(clip.height) * clip.width, 0);
  for (int y = 0; y < clip.height; ++y)
    for (int x = 0; x < clip.width; ++x) {
      double lx = x - cx, ly = y - cy;
      bool inside;
      if (m.shape_kind == 0)
        inside = std::abs(lx) <= m.half_w - erode_px &&
                 std::abs(ly) <= m.half_h - erode_px;
      else
        inside = lx * lx + ly * ly <= (m.half_w - erode_px) * (m.half_w - erode_px);
      if (inside) mask[static_cast<size_t>(y) * clip.width + x] = 1;
    }
  return mask;
}

namespace {

constexpr char kDataMagic[8] = {'M', 'M', 'L', 'D', 'A', 'T', 'A', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  f.write(b, 4);
}

uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw std::runtime_error("dataset file: truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24);
}

}  // namespace

void save_dataset_file(const std::vector<VideoClip>& clips,
                       const DatasetConfig& config, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(kDataMagic, sizeof(kDataMagic));
  write_u32(f, 1);  // version
  write_u32(f, config.mode == LabelMode::kSingle ? 0u : 1u);
  write_u32(f, static_cast<uint32_t>(clips.size()));
  write_u32(f, static_cast<uint32_t>(config.t_total));
  write_u32(f, static_cast<uint32_t>(config.height));
  write_u32(f, static_cast<uint32_t>(config.width));
  write_u32(f, static_cast<uint32_t>(config.n_cls));
  for (const VideoClip& c : clips)
    for (float v : c.frames) write_u32(f, std::bit_cast<uint32_t>(v));
  for (const VideoClip& c : clips) {
    if (config.mode == LabelMode::kSingle) {
      write_u32(f, static_cast<uint32_t>(c.label));
    } else {
      f.write(reinterpret_cast<const char*>(c.label_vec.data()),
              static_cast<std::streamsize>(c.label_vec.size()));
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<VideoClip> load_dataset_file(const std::string& path,
                                         DatasetConfig* config_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kDataMagic, 8) != 0)
    throw std::runtime_error("dataset file: bad magic in " + path);
  uint32_t version = read_u32(f);
  if (version != 1) throw std::runtime_error("dataset file: unsupported version");
  uint32_t mode = read_u32(f);
  uint32_t num = read_u32(f);
  uint32_t t_total = read_u32(f);
  uint32_t height = read_u32(f);
  uint32_t width = read_u32(f);
  uint32_t n_cls = read_u32(f);

  std::vector<VideoClip> clips(num);
  size_t per_clip = static_cast<size_t>(t_total) * 3 * height * width;
  for (uint32_t i = 0; i < num; ++i) {
    VideoClip& c = clips[i];
    c.clip_id = static_cast<int>(i);
    c.t_total = static_cast<int>(t_total);
    c.height = static_cast<int>(height);
    c.width = static_cast<int>(width);
    c.frames.resize(per_clip);
    for (size_t k = 0; k < per_clip; ++k)
      c.frames[k] = std::bit_cast<float>(read_u32(f));
  }
  for (uint32_t i = 0; i < num; ++i) {
    if (mode == 0) {
      clips[i].label = static_cast<int>(read_u32(f));
    } else {
      clips[i].label_vec.resize(n_cls);
      f.read(reinterpret_cast<char*>(clips[i].label_vec.data()), n_cls);
      if (!f) throw std::runtime_error("dataset file: truncated labels");
    }
  }
  if (config_out) {
    config_out->t_total = static_cast<int>(t_total);
    config_out->height = static_cast<int>(height);
    config_out->width = static_cast<int>(width);
    config_out->n_cls = static_cast<int>(n_cls);
    config_out->mode = mode == 0 ? LabelMode::kSingle : LabelMode::kMulti;
  }
  return clips;
}

}  // namespace mml
