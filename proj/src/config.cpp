#include "mml/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace mml {

using nlohmann::json;

namespace {

int line_of_offset(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      fail("unknown key '" + (section.empty() ? it.key() : section + "." + it.key()) + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail("parse error at line " + std::to_string(line_of_offset(text, e.byte)) +
         ": " + e.what());
  }
  if (!root.is_object()) fail("top level must be an object");
  check_keys(root, "", {"dataset", "model", "train", "pipeline", "eval", "flow"});

  RunConfig cfg;
  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    check_keys(d, "dataset",
               {"num_clips_train", "num_clips_val", "t_total", "height", "width",
                "n_cls", "mode", "texture_noise", "seed", "debug_static"});
    read(d, "num_clips_train", cfg.dataset.num_clips_train);
    read(d, "num_clips_val", cfg.dataset.num_clips_val);
    read(d, "t_total", cfg.dataset.t_total);
    read(d, "height", cfg.dataset.height);
    read(d, "width", cfg.dataset.width);
    read(d, "n_cls", cfg.dataset.n_cls);
    if (d.contains("mode")) {
      std::string m = d["mode"].get<std::string>();
      if (m == "single")
        cfg.dataset.mode = LabelMode::kSingle;
      else if (m == "multi")
        cfg.dataset.mode = LabelMode::kMulti;
      else
        fail("dataset.mode must be 'single' or 'multi'");
    }
    read(d, "texture_noise", cfg.dataset.texture_noise);
    read(d, "seed", cfg.dataset.seed);
    read(d, "debug_static", cfg.dataset.debug_static);
  }
  if (root.contains("model")) {
    const json& m = root["model"];
    check_keys(m, "model", {"widths", "shift_fraction", "n_in", "kernel"});
    read(m, "widths", cfg.model.widths);
    read(m, "shift_fraction", cfg.model.shift_fraction);
    read(m, "n_in", cfg.model.n_in);
    read(m, "kernel", cfg.model.kernel);
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, "train",
               {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                "lr_milestones", "lr_factor", "seed", "threads", "strategy", "tau",
                "val_dense_k", "val_uniform_m", "distill_weight"});
    read(t, "epochs", cfg.train.epochs);
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "lr", cfg.train.lr);
    read(t, "momentum", cfg.train.momentum);
    read(t, "weight_decay", cfg.train.weight_decay);
    read(t, "lr_milestones", cfg.train.lr_milestones);
    read(t, "lr_factor", cfg.train.lr_factor);
    read(t, "seed", cfg.train.seed);
    read(t, "threads", cfg.train.threads);
    if (t.contains("strategy")) {
      std::string s = t["strategy"].get<std::string>();
      if (s == "uniform")
        cfg.train.sampling.strategy = SamplingStrategy::kUniform;
      else if (s == "dense")
        cfg.train.sampling.strategy = SamplingStrategy::kDense;
      else if (s == "mixed")
        cfg.train.sampling.strategy = SamplingStrategy::kMixed;
      else
        fail("train.strategy must be 'uniform', 'dense' or 'mixed'");
    }
    read(t, "tau", cfg.train.sampling.tau);
    read(t, "val_dense_k", cfg.train.val_dense_k);
    read(t, "val_uniform_m", cfg.train.val_uniform_m);
    read(t, "distill_weight", cfg.train.distill_weight);
  }
  if (root.contains("pipeline")) {
    const json& p = root["pipeline"];
    check_keys(p, "pipeline", {"preset", "modalities"});
    read(p, "preset", cfg.pipeline_preset);
    if (cfg.pipeline_preset != "solo" && cfg.pipeline_preset != "ensemble")
      fail("pipeline.preset must be 'solo' or 'ensemble'");
    if (p.contains("modalities")) {
      cfg.pipeline_modalities.clear();
      for (const auto& m : p["modalities"])
        cfg.pipeline_modalities.push_back(modality_from_name(m.get<std::string>()));
    }
  }
  if (root.contains("eval")) {
    const json& e = root["eval"];
    check_keys(e, "eval", {"dense_k", "uniform_m"});
    read(e, "dense_k", cfg.eval_dense_k);
    read(e, "uniform_m", cfg.eval_uniform_m);
  }
  if (root.contains("flow")) {
    const json& f = root["flow"];
    check_keys(f, "flow", {"lambda", "theta", "tau", "warps", "scales", "iterations"});
    read(f, "lambda", cfg.flow.lambda);
    read(f, "theta", cfg.flow.theta);
    read(f, "tau", cfg.flow.tau);
    read(f, "warps", cfg.flow.warps);
    read(f, "scales", cfg.flow.scales);
    read(f, "iterations", cfg.flow.iterations);
  }

  try {
    cfg.dataset.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  cfg.model.n_cls = cfg.dataset.n_cls;
  cfg.model.head = cfg.dataset.mode == LabelMode::kSingle ? HeadKind::kSoftmaxCe
                                                          : HeadKind::kSigmoidBce;
  cfg.train.sampling.n_in = cfg.model.n_in;
  try {
    cfg.train.validate();
    ModelSpec probe = cfg.model;
    probe.input_channels = 3;
    probe.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

ModelSpec RunConfig::model_for(Modality m) const {
  ModelSpec spec = model;
  spec.input_channels = channels_of(m);
  return spec;
}

PipelineConfig RunConfig::pipeline_config(const std::string& run_dir,
                                          bool resume) const {
  PipelineConfig pc;
  pc.dataset = dataset;
  pc.model = model;
  pc.train = train;
  pc.modalities = pipeline_modalities;
  pc.flow_params = flow;
  pc.run_dir = run_dir;
  pc.resume = resume;
  return pc;
}

}  // namespace mml
