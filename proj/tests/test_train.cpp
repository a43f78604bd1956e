#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mml/config.hpp"
#include "mml/train.hpp"

using namespace mml;

namespace {

struct TinyWorld {
  Dataset ds;
  std::vector<ClipFlows> train_flows, val_flows;
  TrainData data;
};

// t_total == n_in forces the uniform sampler to the identity, which makes
// hand-unrolled oracles independent of the rng stream.
TinyWorld tiny_rgb_world(int t_total = 4, int n_clips = 2, int n_cls = 2,
                         bool with_flows = false) {
  TinyWorld w;
  DatasetConfig dc;
  dc.num_clips_train = n_clips;
  dc.num_clips_val = 2;
  dc.t_total = t_total;
  dc.height = 16;
  dc.width = 16;
  dc.n_cls = n_cls;
  dc.seed = 11;
  dc.texture_noise = 0.01;
  w.ds = generate_dataset(dc);
  if (with_flows) {
    w.train_flows = ensure_flow_cache(w.ds.train, "", "train", {}, 2);
    w.val_flows = ensure_flow_cache(w.ds.val, "", "val", {}, 2);
  }
  w.data.train = &w.ds.train;
  w.data.val = &w.ds.val;
  w.data.train_flows = with_flows ? &w.train_flows : nullptr;
  w.data.val_flows = with_flows ? &w.val_flows : nullptr;
  w.data.mode = LabelMode::kSingle;
  w.data.n_cls = n_cls;
  w.data.t_total = t_total;
  return w;
}

ModelSpec tiny_spec(Modality m, int n_in, int n_cls,
                    std::vector<int> widths = {8}) {
  ModelSpec s;
  s.input_channels = channels_of(m);
  s.n_in = n_in;
  s.n_cls = n_cls;
  s.widths = std::move(widths);
  return s;
}

TrainConfig tiny_cfg(int epochs, int batch, double lr, uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.lr = lr;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.lr_milestones = {};
  c.seed = seed;
  c.sampling.strategy = SamplingStrategy::kUniform;
  c.sampling.n_in = 4;
  c.sampling.tau = 1;
  c.threads = 2;
  return c;
}

}  // namespace

TEST_CASE("sgd step: closed forms") {
  TensorMap w, g, v;
  w.emplace("p", Tensor({2}, {1.0f, -2.0f}));
  g.emplace("p", Tensor({2}, {0.5f, 0.25f}));

  SUBCASE("momentum 0, no decay: w - lr*g") {
    sgd_step(w, g, v, 0.1, 0.0, 0.0);
    CHECK(w.at("p").data[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(w.at("p").data[1] == doctest::Approx(-2.0 - 0.1 * 0.25));
  }

  SUBCASE("pure decay: g=0, v=0 gives w*(1 - lr*wd)") {
    g.at("p").data = {0.0f, 0.0f};
    sgd_step(w, g, v, 0.1, 0.9, 0.01);
    CHECK(w.at("p").data[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01)));
    CHECK(w.at("p").data[1] == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.01)));
  }

  SUBCASE("two steps with momentum match the hand-unrolled recurrence") {
    const double lr = 0.05, mom = 0.9;
    double wv = 1.0, vv = 0.0;
    double g1 = 0.5, g2 = -0.3;
    vv = mom * vv + g1;
    wv -= lr * vv;
    vv = mom * vv + g2;
    wv -= lr * vv;
    TensorMap g2m;
    g2m.emplace("p", Tensor({2}, {-0.3f, -0.3f}));
    g.at("p").data = {0.5f, 0.5f};
    sgd_step(w, g, v, lr, mom, 0.0);
    sgd_step(w, g2m, v, lr, mom, 0.0);
    CHECK(w.at("p").data[0] == doctest::Approx(wv).epsilon(1e-6));
  }

  SUBCASE("shape mismatch is rejected") {
    TensorMap bad;
    bad.emplace("p", Tensor({3}, {0.0f, 0.0f, 0.0f}));
    CHECK_THROWS_AS(sgd_step(w, bad, v, 0.1, 0.0, 0.0), std::invalid_argument);
    TensorMap unknown;
    unknown.emplace("q", Tensor({2}, {0.0f, 0.0f}));
    CHECK_THROWS_AS(sgd_step(w, unknown, v, 0.1, 0.0, 0.0), std::invalid_argument);
  }
}

TEST_CASE("learning-rate schedule applies the factor at each milestone") {
  TrainConfig c;
  c.lr = 0.1;
  c.lr_milestones = {3, 5};
  c.lr_factor = 0.1;
  CHECK(c.lr_at(0) == doctest::Approx(0.1));
  CHECK(c.lr_at(2) == doctest::Approx(0.1));
  CHECK(c.lr_at(3) == doctest::Approx(0.01));
  CHECK(c.lr_at(4) == doctest::Approx(0.01));
  CHECK(c.lr_at(5) == doctest::Approx(0.001));
}

TEST_CASE("zero learning rate leaves the checkpoint bit-identical") {
  TinyWorld w = tiny_rgb_world();
  ModelIo init{tiny_spec(Modality::kRgb, 4, 2), Modality::kRgb,
               init_weights(tiny_spec(Modality::kRgb, 4, 2), 7)};
  TrainConfig cfg = tiny_cfg(2, 2, 0.0, 3);
  TrainResult res = train_single(init, w.data, cfg);
  CHECK(tensor_map_hash(res.final_weights) == tensor_map_hash(init.weights));
  CHECK(tensor_map_hash(res.best_weights) == tensor_map_hash(init.weights));
}

TEST_CASE("one epoch on two clips reproduces the hand-unrolled update") {
  TinyWorld w = tiny_rgb_world();
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2);
  TensorMap init = init_weights(spec, 21);
  TrainConfig cfg = tiny_cfg(1, 2, 0.1, 5);

  // oracle: forward both clips at the forced identity indices, accumulate
  // CE gradients scaled by 1/B, apply one vanilla SGD step
  TensorMap grad_sum;
  for (const auto& [name, shape] : expected_shapes(spec))
    if (is_trainable_param(name)) grad_sum.emplace(name, Tensor::zeros(shape));
  for (const VideoClip& clip : w.ds.train) {
    ModalityTensor mt = clip_to_modality(clip, Modality::kRgb, {0, 1, 2, 3});
    ForwardOut fo = forward(init, spec, mt.data, NetMode::kTrain);
    std::vector<float> dl(2, 0.0f);
    ce_grad(softmax(fo.logits), clip.label, 0.5f, dl);
    TensorMap g = backward(init, spec, mt.data, dl);
    for (auto& [name, t] : grad_sum) {
      const Tensor& add = g.at(name);
      for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += add.data[i];
    }
  }
  TensorMap expect = init;
  TensorMap vel;
  sgd_step(expect, grad_sum, vel, 0.1, 0.0, 0.0);

  TrainResult res = train_single({spec, Modality::kRgb, init}, w.data, cfg);
  for (const auto& [name, t] : expect)
    if (is_trainable_param(name))
      CHECK(res.final_weights.at(name).data == t.data);
}

TEST_CASE("training is bit-deterministic, including across thread counts") {
  TinyWorld w = tiny_rgb_world(8, 8, 2);
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2, {8, 8});
  ModelIo init{spec, Modality::kRgb, init_weights(spec, 3)};
  TrainConfig cfg = tiny_cfg(2, 4, 0.05, 9);
  cfg.sampling.strategy = SamplingStrategy::kMixed;

  TrainResult a = train_single(init, w.data, cfg);
  TrainResult b = train_single(init, w.data, cfg);
  CHECK(tensor_map_hash(a.final_weights) == tensor_map_hash(b.final_weights));

  cfg.threads = 1;
  TrainResult c = train_single(init, w.data, cfg);
  CHECK(tensor_map_hash(a.final_weights) == tensor_map_hash(c.final_weights));

  cfg.seed = 10;
  TrainResult d = train_single(init, w.data, cfg);
  CHECK(tensor_map_hash(a.final_weights) != tensor_map_hash(d.final_weights));
}

TEST_CASE("mutual training: both models move, the mutual term is live") {
  TinyWorld w = tiny_rgb_world(8, 4, 2);
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2);
  ModelIo a{spec, Modality::kRgb, init_weights(spec, 1)};
  ModelIo b{spec, Modality::kRgb, init_weights(spec, 2)};
  TrainConfig cfg = tiny_cfg(1, 4, 0.05, 4);

  auto res = train_mutual({a, b}, w.data, cfg);
  REQUIRE(res.size() == 2);
  CHECK(res[0].log[0].kl > 0.0);  // different inits disagree from step 0
  CHECK(res[1].log[0].kl > 0.0);
  CHECK(tensor_map_hash(res[0].final_weights) != tensor_map_hash(a.weights));
  CHECK(tensor_map_hash(res[1].final_weights) != tensor_map_hash(b.weights));
}

TEST_CASE("mutual training rejects identical modality with identical init") {
  TinyWorld w = tiny_rgb_world();
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2);
  ModelIo a{spec, Modality::kRgb, init_weights(spec, 1)};
  TrainConfig cfg = tiny_cfg(1, 2, 0.05, 4);
  CHECK_THROWS_AS(train_mutual({a, a}, w.data, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_mutual({a}, w.data, cfg), std::invalid_argument);
}

TEST_CASE("three-modality mutual training runs and aligns indices") {
  TinyWorld w = tiny_rgb_world(8, 4, 2, /*with_flows=*/true);
  std::vector<ModelIo> models;
  int k = 0;
  for (Modality m : {Modality::kRgb, Modality::kFlow, Modality::kDiff}) {
    ModelSpec s = tiny_spec(m, 2, 2, {8, 8});
    models.push_back({s, m, init_weights(s, static_cast<uint64_t>(++k))});
  }
  TrainConfig cfg = tiny_cfg(1, 4, 0.05, 6);
  cfg.sampling.n_in = 2;

  auto res = train_mutual(models, w.data, cfg);
  REQUIRE(res.size() == 3);
  CHECK(res[0].final_weights.at("block0.conv.weight").shape[1] == 3);
  CHECK(res[1].final_weights.at("block0.conv.weight").shape[1] == 10);
  CHECK(res[2].final_weights.at("block0.conv.weight").shape[1] == 15);
}

TEST_CASE("distillation: identical teacher gives a zero first-step term") {
  TinyWorld w = tiny_rgb_world(4, 2, 2);
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2);
  ModelIo student{spec, Modality::kRgb, init_weights(spec, 5)};
  ModelIo teacher = student;
  TrainConfig cfg = tiny_cfg(1, 2, 0.05, 7);  // one batch, one epoch

  TrainResult mars = train_distill(student, teacher, TrainMethod::kMars, w.data, cfg);
  CHECK(mars.log[0].distill == doctest::Approx(0.0));
  TrainResult d3d = train_distill(student, teacher, TrainMethod::kD3d, w.data, cfg);
  CHECK(d3d.log[0].distill == doctest::Approx(0.0));
}

TEST_CASE("d3d adds exactly the mean squared logit distance") {
  TinyWorld w = tiny_rgb_world(4, 2, 2);
  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 2);
  ModelIo student{spec, Modality::kRgb, init_weights(spec, 5)};
  ModelIo teacher{spec, Modality::kRgb, init_weights(spec, 6)};
  TrainConfig cfg = tiny_cfg(1, 2, 0.05, 7);

  std::vector<std::vector<float>> sl, tl;
  for (const VideoClip& clip : w.ds.train) {
    ModalityTensor mt = clip_to_modality(clip, Modality::kRgb, {0, 1, 2, 3});
    sl.push_back(forward(student.weights, spec, mt.data, NetMode::kTrain).logits);
    tl.push_back(forward(teacher.weights, spec, mt.data, NetMode::kTrain).logits);
  }
  double expect = d3d_loss(sl, tl, 1.0, false, 2);

  TrainResult res = train_distill(student, teacher, TrainMethod::kD3d, w.data, cfg);
  CHECK(res.log[0].distill == doctest::Approx(expect).epsilon(1e-9));
  CHECK(res.log[0].loss == doctest::Approx(res.log[0].ce_or_bce + res.log[0].kl +
                                           res.log[0].distill));
}

TEST_CASE("multi-label training: BCE head runs and reports mAP") {
  DatasetConfig dc;
  dc.num_clips_train = 8;
  dc.num_clips_val = 4;
  dc.t_total = 4;
  dc.height = 16;
  dc.width = 16;
  dc.n_cls = 6;
  dc.mode = LabelMode::kMulti;
  dc.seed = 13;
  Dataset ds = generate_dataset(dc);
  TrainData data;
  data.train = &ds.train;
  data.val = &ds.val;
  data.mode = LabelMode::kMulti;
  data.n_cls = 6;
  data.t_total = 4;

  ModelSpec spec = tiny_spec(Modality::kRgb, 4, 6);
  spec.head = HeadKind::kSigmoidBce;
  ModelIo init{spec, Modality::kRgb, init_weights(spec, 2)};
  TrainConfig cfg = tiny_cfg(1, 4, 0.05, 3);
  TrainResult res = train_single(init, data, cfg);
  bool saw_map = false;
  for (const EpochLog& l : res.log)
    if (l.split == "val") {
      CHECK(l.map >= 0.0);
      CHECK(l.map <= 1.0);
      saw_map = true;
    }
  CHECK(saw_map);
}

TEST_CASE("checkpoint sidecars round-trip model metadata") {
  ModelSpec spec = tiny_spec(Modality::kFlow, 4, 3, {8, 16});
  TensorMap w = init_weights(spec, 9);
  auto path = (std::filesystem::temp_directory_path() / "mml_ckpt_meta.ckpt").string();
  save_model_checkpoint(w, spec, Modality::kFlow, path);
  ModelIo back = load_model_checkpoint(path);
  CHECK(back.modality == Modality::kFlow);
  CHECK(back.spec == spec);
  CHECK(tensor_map_hash(back.weights) == tensor_map_hash(w));
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

namespace {

PipelineConfig micro_pipeline_config(const std::string& dir,
                                     std::vector<Modality> mods) {
  PipelineConfig pc;
  pc.dataset.num_clips_train = 8;
  pc.dataset.num_clips_val = 4;
  pc.dataset.t_total = 8;
  pc.dataset.height = 16;
  pc.dataset.width = 16;
  pc.dataset.n_cls = 4;
  pc.dataset.seed = 5;
  pc.model.n_in = 2;
  pc.model.n_cls = 4;
  pc.model.widths = {8, 8};
  pc.train = tiny_cfg(1, 4, 0.05, 17);
  pc.train.sampling.n_in = 2;
  pc.modalities = std::move(mods);
  pc.run_dir = dir;
  return pc;
}

}  // namespace

TEST_CASE("solo pipeline: stage structure, counts, determinism, resume") {
  auto dir = (std::filesystem::temp_directory_path() / "mml_solo_pipe").string();
  std::filesystem::remove_all(dir);
  PipelineConfig pc = micro_pipeline_config(dir, {Modality::kRgb, Modality::kDiff});

  PipelineResult res = run_solo_pipeline(pc);
  CHECK(res.runs.size() == 2 + 2 + 2);  // 2 CE + 2 ML + M mutual-modality
  int s1 = 0, s2 = 0, s3 = 0;
  for (const auto& r : res.runs) {
    if (r.stage == 1) ++s1;
    if (r.stage == 2) ++s2;
    if (r.stage == 3) ++s3;
    CHECK(std::filesystem::exists(r.checkpoint));
    CHECK(std::filesystem::exists(r.metrics_log));
    CHECK(hash_hex(fnv1a_file(r.checkpoint)) == r.hash);
  }
  CHECK(s1 == 2);
  CHECK(s2 == 2);
  CHECK(s3 == 2);
  REQUIRE(res.final_members.size() == 2);

  // the stage-3 diff model keeps every non-first-conv shape of the stage-2 model
  ModelIo diff = load_model_checkpoint(dir + "/checkpoints/s3_mml_diff.ckpt");
  ModelIo ml0 = load_model_checkpoint(dir + "/checkpoints/s2_ml_rgb_0.ckpt");
  CHECK(diff.weights.at("block0.conv.weight").shape[1] == 15);
  for (const auto& [name, t] : ml0.weights)
    if (name != "block0.conv.weight")
      CHECK(diff.weights.at(name).shape == t.shape);

  // bit-identical rerun in a fresh directory
  auto dir2 = dir + "_again";
  std::filesystem::remove_all(dir2);
  pc.run_dir = dir2;
  PipelineResult res2 = run_solo_pipeline(pc);
  REQUIRE(res2.runs.size() == res.runs.size());
  for (size_t i = 0; i < res.runs.size(); ++i)
    CHECK(res.runs[i].hash == res2.runs[i].hash);

  // resume reuses the recorded outputs
  pc.run_dir = dir;
  pc.resume = true;
  PipelineResult res3 = run_solo_pipeline(pc);
  for (size_t i = 0; i < res.runs.size(); ++i)
    CHECK(res.runs[i].hash == res3.runs[i].hash);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("ensemble pipeline: counts and cross-launch stage-3 inits") {
  auto dir = (std::filesystem::temp_directory_path() / "mml_ens_pipe").string();
  std::filesystem::remove_all(dir);
  PipelineConfig pc = micro_pipeline_config(dir, {Modality::kRgb, Modality::kDiff});

  PipelineResult res = run_ensemble_pipeline(pc);
  CHECK(res.runs.size() == 2 + 4 + 4);  // 2 CE + 2x2 ML + 2 per modality
  REQUIRE(res.final_members.size() == 2);

  // each stage-3 pair pulls one init from each stage-2 launch
  for (const auto& r : res.runs) {
    if (r.stage != 3) continue;
    if (r.run_id.ends_with("_0"))
      CHECK(r.init_from.find("s2_ml1") != std::string::npos);
    else
      CHECK(r.init_from.find("s2_ml2") != std::string::npos);
  }

  // dropping a modality drops exactly one stage-3 pair
  auto dir2 = dir + "_rgbonly";
  std::filesystem::remove_all(dir2);
  pc.run_dir = dir2;
  pc.modalities = {Modality::kRgb};
  PipelineResult res2 = run_ensemble_pipeline(pc);
  CHECK(res2.runs.size() == 2 + 4 + 2);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("solo pipeline requires at least two distinct modalities") {
  auto dir = (std::filesystem::temp_directory_path() / "mml_bad_pipe").string();
  PipelineConfig pc = micro_pipeline_config(dir, {Modality::kRgb});
  CHECK_THROWS_AS(run_solo_pipeline(pc), std::invalid_argument);
  pc.modalities = {Modality::kRgb, Modality::kRgb};
  CHECK_THROWS_AS(run_solo_pipeline(pc), std::invalid_argument);
}
