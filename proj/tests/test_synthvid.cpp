#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mml/modality.hpp"
#include "mml/synthvid.hpp"

using namespace mml;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.num_clips_train = 32;
  c.num_clips_val = 8;
  c.t_total = 8;
  c.height = 24;
  c.width = 24;
  c.n_cls = 8;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("generation is bit-deterministic in the config") {
  DatasetConfig c = small_config();
  Dataset a = generate_dataset(c);
  Dataset b = generate_dataset(c);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].frames == b.train[i].frames);
    CHECK(a.train[i].label == b.train[i].label);
  }
  for (size_t i = 0; i < a.val.size(); ++i)
    CHECK(a.val[i].frames == b.val[i].frames);

  DatasetConfig c2 = c;
  c2.seed = 8;
  Dataset d = generate_dataset(c2);
  CHECK(d.train[0].frames != a.train[0].frames);
}

TEST_CASE("pixels stay in range and shapes agree") {
  Dataset ds = generate_dataset(small_config());
  for (const VideoClip& clip : ds.train) {
    CHECK(clip.height == 24);
    CHECK(clip.width == 24);
    CHECK(clip.t_total == 8);
    for (float v : clip.frames) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("round-robin class balance is exact") {
  DatasetConfig c = small_config();
  c.num_clips_train = 512;
  c.n_cls = 8;
  Dataset ds = generate_dataset(c);
  std::vector<int> counts(8, 0);
  for (const VideoClip& clip : ds.train) ++counts[static_cast<size_t>(clip.label)];
  for (int v : counts) CHECK(v == 512 / 8);
}

TEST_CASE("invalid configs are rejected") {
  DatasetConfig c = small_config();
  c.height = 15;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
  c = small_config();
  c.width = 8;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
  c = small_config();
  c.n_cls = 17;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
  c = small_config();
  c.n_cls = 1;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
  c = small_config();
  c.mode = LabelMode::kMulti;
  c.n_cls = 3;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
  c = small_config();
  c.num_clips_val = 0;
  CHECK_THROWS_AS(generate_dataset(c), std::invalid_argument);
}

TEST_CASE("static control clips have zero velocity and frozen pixels") {
  DatasetConfig c = small_config();
  c.debug_static = true;
  c.texture_noise = 0.0;
  c.num_clips_train = 4;
  Dataset ds = generate_dataset(c);
  for (const VideoClip& clip : ds.train) {
    CHECK(clip.motion.vx == 0.0);
    CHECK(clip.motion.vy == 0.0);
    const size_t frame_sz = static_cast<size_t>(3) * clip.height * clip.width;
    for (int t = 1; t < clip.t_total; ++t)
      for (size_t i = 0; i < frame_sz; ++i)
        CHECK(clip.frame(t)[i] == clip.frame(0)[i]);
  }
}

TEST_CASE("multi-label clips mark shape and direction bits") {
  DatasetConfig c = small_config();
  c.mode = LabelMode::kMulti;
  c.n_cls = 6;  // 2 shapes + 4 directions
  c.num_clips_train = 16;
  Dataset ds = generate_dataset(c);
  std::vector<int> shape_counts(2, 0);
  for (const VideoClip& clip : ds.train) {
    REQUIRE(clip.label_vec.size() == 6);
    int active = 0, shape_bits = 0, dir_bits = 0;
    for (size_t i = 0; i < clip.label_vec.size(); ++i) {
      if (!clip.label_vec[i]) continue;
      ++active;
      if (i < 2)
        ++shape_bits;
      else
        ++dir_bits;
    }
    CHECK(active == 2);
    CHECK(shape_bits == 1);
    CHECK(dir_bits == 1);
    ++shape_counts[clip.label_vec[0] ? 0 : 1];
  }
  CHECK(shape_counts[0] == 8);  // exact balance over the (shape, dir) grid
  CHECK(shape_counts[1] == 8);
}

TEST_CASE("dataset container round-trips frames and labels") {
  DatasetConfig c = small_config();
  c.num_clips_train = 6;
  Dataset ds = generate_dataset(c);
  std::string path =
      (std::filesystem::temp_directory_path() / "mml_ds_roundtrip.mmld").string();
  save_dataset_file(ds.train, c, path);
  DatasetConfig meta;
  auto back = load_dataset_file(path, &meta);
  REQUIRE(back.size() == ds.train.size());
  CHECK(meta.t_total == c.t_total);
  CHECK(meta.n_cls == c.n_cls);
  CHECK(meta.mode == LabelMode::kSingle);
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].frames == ds.train[i].frames);
    CHECK(back[i].label == ds.train[i].label);
  }
  std::filesystem::remove(path);

  c.mode = LabelMode::kMulti;
  c.n_cls = 6;
  Dataset md = generate_dataset(c);
  save_dataset_file(md.train, c, path);
  auto mback = load_dataset_file(path, &meta);
  CHECK(meta.mode == LabelMode::kMulti);
  for (size_t i = 0; i < mback.size(); ++i)
    CHECK(mback[i].label_vec == md.train[i].label_vec);
  std::filesystem::remove(path);
}

TEST_CASE("clip ids are unique across splits") {
  Dataset ds = generate_dataset(small_config());
  std::vector<int> ids;
  for (const auto& c : ds.train) ids.push_back(c.clip_id);
  for (const auto& c : ds.val) ids.push_back(c.clip_id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("dominant estimated flow direction matches the label") {
  // label-motion consistency against the TV-L1 oracle, on a modest sample
  DatasetConfig c;
  c.num_clips_train = 24;
  c.num_clips_val = 1;
  c.t_total = 6;
  c.height = 32;
  c.width = 32;
  c.n_cls = 8;
  c.seed = 99;
  c.texture_noise = 0.02;
  Dataset ds = generate_dataset(c);
  int matches = 0;
  for (const VideoClip& clip : ds.train) {
    int t = clip.t_total / 2;
    FlowField f = tvl1_flow(luminance(clip.frame(t), 32, 32),
                            luminance(clip.frame(t + 1), 32, 32));
    auto mask = interior_mask(clip, t, 1.0);
    double su = 0, sv = 0;
    int n = 0;
    for (size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) {
        su += f.u[i];
        sv += f.v[i];
        ++n;
      }
    REQUIRE(n > 0);
    double ang = std::atan2(sv / n, su / n);
    int cls = static_cast<int>(std::lround(ang / (2.0 * M_PI / 8))) % 8;
    if (cls < 0) cls += 8;
    if (cls == clip.label) ++matches;
  }
  CHECK(static_cast<double>(matches) / 24.0 >= 0.95);
}
