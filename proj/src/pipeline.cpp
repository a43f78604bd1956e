#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "mml/rng.hpp"
#include "mml/train.hpp"

namespace mml {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json spec_to_json(const ModelSpec& s) {
  return json{{"input_channels", s.input_channels},
              {"n_in", s.n_in},
              {"n_cls", s.n_cls},
              {"widths", s.widths},
              {"shift_fraction", s.shift_fraction},
              {"kernel", s.kernel},
              {"head", s.head == HeadKind::kSoftmaxCe ? "softmax" : "sigmoid"}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.input_channels = j.at("input_channels").get<int>();
  s.n_in = j.at("n_in").get<int>();
  s.n_cls = j.at("n_cls").get<int>();
  s.widths = j.at("widths").get<std::vector<int>>();
  s.shift_fraction = j.at("shift_fraction").get<double>();
  s.kernel = j.at("kernel").get<int>();
  s.head = j.at("head").get<std::string>() == "sigmoid" ? HeadKind::kSigmoidBce
                                                        : HeadKind::kSoftmaxCe;
  return s;
}

ModelSpec spec_for(ModelSpec base, Modality m) {
  base.input_channels = channels_of(m);
  return base;
}

json run_to_json(const PipelineRun& r) {
  return json{{"stage", r.stage},        {"run_id", r.run_id},
              {"method", r.method},      {"modality", r.modality},
              {"train_seed", r.train_seed}, {"init_from", r.init_from},
              {"checkpoint", r.checkpoint}, {"metrics_log", r.metrics_log},
              {"hash", r.hash},          {"best_epoch", r.best_epoch},
              {"best_metric", r.best_metric}};
}

PipelineRun run_from_json(const json& j) {
  PipelineRun r;
  r.stage = j.at("stage").get<int>();
  r.run_id = j.at("run_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.modality = j.at("modality").get<std::string>();
  r.train_seed = j.at("train_seed").get<uint64_t>();
  r.init_from = j.at("init_from").get<std::string>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.metrics_log = j.at("metrics_log").get<std::string>();
  r.hash = j.at("hash").get<std::string>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_metric = j.at("best_metric").get<double>();
  return r;
}

std::string config_fingerprint(const PipelineConfig& cfg, const char* preset) {
  json j;
  j["preset"] = preset;
  j["dataset"] = {{"seed", cfg.dataset.seed},
                  {"train", cfg.dataset.num_clips_train},
                  {"val", cfg.dataset.num_clips_val},
                  {"t", cfg.dataset.t_total},
                  {"h", cfg.dataset.height},
                  {"w", cfg.dataset.width},
                  {"n_cls", cfg.dataset.n_cls},
                  {"mode", cfg.dataset.mode == LabelMode::kSingle ? 0 : 1},
                  {"noise", cfg.dataset.texture_noise}};
  j["model"] = spec_to_json(cfg.model);
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"wd", cfg.train.weight_decay},
                {"milestones", cfg.train.lr_milestones},
                {"factor", cfg.train.lr_factor},
                {"seed", cfg.train.seed}};
  std::vector<std::string> mods;
  for (Modality m : cfg.modalities) mods.emplace_back(modality_name(m));
  j["modalities"] = mods;
  std::string s = j.dump();
  return hash_hex(fnv1a_bytes(s.data(), s.size()));
}

// Launches pipeline stages, persists artifacts, and skips a launch on resume
// when every output checkpoint still matches the manifest hash.
class Runner {
 public:
  Runner(const PipelineConfig& cfg, const char* preset)
      : cfg_(cfg), preset_(preset) {
    fs::create_directories(cfg_.run_dir + "/checkpoints");
    fs::create_directories(cfg_.run_dir + "/logs");
    fs::create_directories(cfg_.run_dir + "/data");

    fingerprint_ = config_fingerprint(cfg, preset);
    manifest_path_ = cfg_.run_dir + "/manifest.json";
    if (cfg_.resume && fs::exists(manifest_path_)) {
      std::ifstream f(manifest_path_);
      json j = json::parse(f);
      if (j.at("config_hash").get<std::string>() != fingerprint_)
        throw std::invalid_argument(
            "pipeline resume: run directory was created with a different config");
      for (const auto& rj : j.at("runs")) {
        PipelineRun r = run_from_json(rj);
        prior_.emplace(r.run_id, std::move(r));
      }
    }

    ds_ = generate_dataset(cfg_.dataset);
    save_dataset_file(ds_.train, cfg_.dataset, cfg_.run_dir + "/data/train.mmld");
    save_dataset_file(ds_.val, cfg_.dataset, cfg_.run_dir + "/data/val.mmld");
    bool need_flow = std::any_of(cfg_.modalities.begin(), cfg_.modalities.end(),
                                 [](Modality m) { return m == Modality::kFlow; });
    if (need_flow) {
      std::string fdir = cfg_.run_dir + "/flow_cache";
      train_flows_ = ensure_flow_cache(ds_.train, fdir, "train", cfg_.flow_params,
                                       cfg_.train.threads);
      val_flows_ = ensure_flow_cache(ds_.val, fdir, "val", cfg_.flow_params,
                                     cfg_.train.threads);
    }
    data_.train = &ds_.train;
    data_.val = &ds_.val;
    data_.train_flows = need_flow ? &train_flows_ : nullptr;
    data_.val_flows = need_flow ? &val_flows_ : nullptr;
    data_.mode = cfg_.dataset.mode;
    data_.n_cls = cfg_.dataset.n_cls;
    data_.t_total = cfg_.dataset.t_total;
  }

  const TrainData& data() const { return data_; }

  uint64_t seed(uint64_t tag) const { return derive_seed(cfg_.train.seed, tag); }

  ModelIo random_model(Modality m, uint64_t init_seed) const {
    ModelSpec spec = spec_for(cfg_.model, m);
    return ModelIo{spec, m, init_weights(spec, init_seed)};
  }

  ModelIo transfer_model(const TensorMap& source, Modality m) const {
    ModelSpec spec = spec_for(cfg_.model, m);
    return ModelIo{spec, m, transfer_weights(source, spec)};
  }

  // One training launch (solo run or mutual launch). run_ids/init_descs are
  // per model. Returns the best weights per model, training only when the
  // recorded outputs cannot be reused.
  std::vector<TensorMap> launch(int stage, const std::string& method,
                                std::vector<ModelIo> models,
                                const std::vector<std::string>& run_ids,
                                const std::vector<std::string>& init_descs,
                                uint64_t train_seed) {
    const size_t m_n = models.size();
    bool reusable = cfg_.resume;
    for (size_t i = 0; reusable && i < m_n; ++i) {
      auto it = prior_.find(run_ids[i]);
      reusable = it != prior_.end() && fs::exists(it->second.checkpoint) &&
                 hash_hex(fnv1a_file(it->second.checkpoint)) == it->second.hash;
    }
    std::vector<TensorMap> best(m_n);
    if (reusable) {
      for (size_t i = 0; i < m_n; ++i) {
        const PipelineRun& r = prior_.at(run_ids[i]);
        best[i] = load_model_checkpoint(r.checkpoint).weights;
        runs_.push_back(r);
      }
      return best;
    }

    TrainConfig tc = cfg_.train;
    tc.seed = train_seed;
    std::vector<TrainResult> results;
    if (m_n == 1) {
      results.push_back(train_single(models[0], data_, tc));
    } else {
      results = train_mutual(models, data_, tc);
    }
    for (size_t i = 0; i < m_n; ++i) {
      PipelineRun r;
      r.stage = stage;
      r.run_id = run_ids[i];
      r.method = method;
      r.modality = modality_name(models[i].modality);
      r.train_seed = train_seed;
      r.init_from = init_descs[i];
      r.checkpoint = cfg_.run_dir + "/checkpoints/" + run_ids[i] + ".ckpt";
      r.metrics_log = cfg_.run_dir + "/logs/" + run_ids[i] + ".jsonl";
      r.best_epoch = results[i].best_epoch;
      r.best_metric = results[i].best_metric;
      save_model_checkpoint(results[i].best_weights, models[i].spec,
                            models[i].modality, r.checkpoint);
      write_metric_log(results[i].log, r.metrics_log);
      r.hash = hash_hex(fnv1a_file(r.checkpoint));
      runs_.push_back(r);
      best[i] = std::move(results[i].best_weights);
    }
    save_manifest({});
    return best;
  }

  PipelineResult finish(const std::vector<std::string>& final_members) {
    save_manifest(final_members);
    PipelineResult out;
    out.runs = runs_;
    out.manifest_path = manifest_path_;
    out.final_members = final_members;
    return out;
  }

  const PipelineRun& run(const std::string& run_id) const {
    for (const PipelineRun& r : runs_)
      if (r.run_id == run_id) return r;
    throw std::logic_error("pipeline: unknown run " + run_id);
  }

 private:
  void save_manifest(const std::vector<std::string>& final_members) {
    json j;
    j["pipeline"] = preset_;
    j["config_hash"] = fingerprint_;
    j["dataset_seed"] = cfg_.dataset.seed;
    j["train_seed"] = cfg_.train.seed;
    std::vector<std::string> mods;
    for (Modality m : cfg_.modalities) mods.emplace_back(modality_name(m));
    j["modalities"] = mods;
    j["runs"] = json::array();
    for (const PipelineRun& r : runs_) j["runs"].push_back(run_to_json(r));
    j["final_members"] = final_members;
    std::ofstream f(manifest_path_, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest: " + manifest_path_);
    f << j.dump(2) << "\n";
  }

  PipelineConfig cfg_;
  const char* preset_;
  std::string fingerprint_;
  std::string manifest_path_;
  Dataset ds_;
  std::vector<ClipFlows> train_flows_, val_flows_;
  TrainData data_;
  std::map<std::string, PipelineRun> prior_;
  std::vector<PipelineRun> runs_;
};

void check_modalities(const PipelineConfig& cfg, size_t min_count) {
  if (cfg.modalities.size() < min_count)
    throw std::invalid_argument("pipeline: not enough modalities configured");
  for (size_t i = 0; i < cfg.modalities.size(); ++i)
    for (size_t j = i + 1; j < cfg.modalities.size(); ++j)
      if (cfg.modalities[i] == cfg.modalities[j])
        throw std::invalid_argument("pipeline: duplicate modality");
}

}  // namespace

void save_model_checkpoint(const TensorMap& weights, const ModelSpec& spec,
                           Modality modality, const std::string& path) {
  save_tensor_map(weights, path);
  json j;
  j["modality"] = modality_name(modality);
  j["spec"] = spec_to_json(spec);
  std::ofstream f(path + ".json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write sidecar: " + path + ".json");
  f << j.dump(2) << "\n";
}

ModelIo load_model_checkpoint(const std::string& path) {
  ModelIo io;
  io.weights = load_tensor_map(path);
  std::ifstream f(path + ".json");
  if (!f) throw std::runtime_error("missing checkpoint sidecar: " + path + ".json");
  json j = json::parse(f);
  io.modality = modality_from_name(j.at("modality").get<std::string>());
  io.spec = spec_from_json(j.at("spec"));
  return io;
}

PipelineResult run_solo_pipeline(const PipelineConfig& cfg) {
  check_modalities(cfg, 2);
  Runner r(cfg, "solo");

  // stage 1: two independent solo RGB runs
  auto a = r.launch(1, "ce", {r.random_model(Modality::kRgb, r.seed(0xA11))},
                    {"s1_ce_rgb_a"}, {"random:" + std::to_string(r.seed(0xA11))},
                    r.seed(0x511));
  auto b = r.launch(1, "ce", {r.random_model(Modality::kRgb, r.seed(0xA12))},
                    {"s1_ce_rgb_b"}, {"random:" + std::to_string(r.seed(0xA12))},
                    r.seed(0x512));

  // stage 2: RGB+RGB mutual learning from the stage-1 pair
  auto ml = r.launch(2, "ml",
                     {r.transfer_model(a[0], Modality::kRgb),
                      r.transfer_model(b[0], Modality::kRgb)},
                     {"s2_ml_rgb_0", "s2_ml_rgb_1"},
                     {r.run("s1_ce_rgb_a").checkpoint, r.run("s1_ce_rgb_b").checkpoint},
                     r.seed(0x521));

  // stage 3: one M-modality mutual launch, every model initialized from the
  // same stage-2 model (adapting the first convolution where needed)
  std::vector<ModelIo> models;
  std::vector<std::string> ids, inits;
  for (Modality m : cfg.modalities) {
    models.push_back(r.transfer_model(ml[0], m));
    ids.push_back(std::string("s3_mml_") + modality_name(m));
    inits.push_back(r.run("s2_ml_rgb_0").checkpoint);
  }
  r.launch(3, "mml", std::move(models), ids, inits, r.seed(0x531));

  return r.finish(ids);
}

PipelineResult run_ensemble_pipeline(const PipelineConfig& cfg) {
  check_modalities(cfg, 1);
  Runner r(cfg, "ensemble");

  auto a = r.launch(1, "ce", {r.random_model(Modality::kRgb, r.seed(0xA11))},
                    {"s1_ce_rgb_a"}, {"random:" + std::to_string(r.seed(0xA11))},
                    r.seed(0x511));
  auto b = r.launch(1, "ce", {r.random_model(Modality::kRgb, r.seed(0xA12))},
                    {"s1_ce_rgb_b"}, {"random:" + std::to_string(r.seed(0xA12))},
                    r.seed(0x512));

  // stage 2: two mutual launches from the same pair of inits, so stage 3 can
  // pair models whose mutual term has not been optimized against each other
  auto l1 = r.launch(2, "ml",
                     {r.transfer_model(a[0], Modality::kRgb),
                      r.transfer_model(b[0], Modality::kRgb)},
                     {"s2_ml1_rgb_0", "s2_ml1_rgb_1"},
                     {r.run("s1_ce_rgb_a").checkpoint, r.run("s1_ce_rgb_b").checkpoint},
                     r.seed(0x521));
  auto l2 = r.launch(2, "ml",
                     {r.transfer_model(a[0], Modality::kRgb),
                      r.transfer_model(b[0], Modality::kRgb)},
                     {"s2_ml2_rgb_0", "s2_ml2_rgb_1"},
                     {r.run("s1_ce_rgb_a").checkpoint, r.run("s1_ce_rgb_b").checkpoint},
                     r.seed(0x522));

  // stage 3: per modality, a same-modality mutual pair initialized with one
  // model from each stage-2 launch; the better one joins the ensemble
  std::vector<std::string> members;
  int mi = 0;
  for (Modality m : cfg.modalities) {
    std::string base = std::string("s3_ml_") + modality_name(m);
    std::vector<std::string> ids = {base + "_0", base + "_1"};
    r.launch(3, "ml",
             {r.transfer_model(l1[0], m), r.transfer_model(l2[0], m)}, ids,
             {r.run("s2_ml1_rgb_0").checkpoint, r.run("s2_ml2_rgb_0").checkpoint},
             r.seed(0x530 + static_cast<uint64_t>(mi)));
    const PipelineRun& r0 = r.run(ids[0]);
    const PipelineRun& r1 = r.run(ids[1]);
    members.push_back(r1.best_metric > r0.best_metric ? ids[1] : ids[0]);
    ++mi;
  }
  return r.finish(members);
}

}  // namespace mml
