// Command-line entry point: dataset generation, training, the two pipeline
// presets, evaluation and metric plotting. Batch use only; every artifact
// lands under a run directory.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "mml/config.hpp"
#include "mml/eval.hpp"
#include "mml/plot.hpp"
#include "mml/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mml;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNumerical = 4;

std::string default_run_dir(uint64_t seed) {
  const char* root_env = std::getenv("MML_RUN_DIR");
  std::string root = root_env ? root_env : "runs";
  auto now = std::chrono::system_clock::now().time_since_epoch();
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return root + "/run-" + std::to_string(secs) + "-s" + std::to_string(seed);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// "dense:K,uniform:M"
void parse_eval_spec(const std::string& s, int& k, int& m) {
  for (const std::string& part : split_list(s)) {
    auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("config: bad --spec " + s);
    std::string name = part.substr(0, colon);
    int value = std::stoi(part.substr(colon + 1));
    if (name == "dense")
      k = value;
    else if (name == "uniform")
      m = value;
    else
      throw ConfigError("config: bad --spec entry " + name);
  }
}

struct LoadedData {
  Dataset ds;
  std::vector<ClipFlows> train_flows, val_flows;
  TrainData view;
};

LoadedData prepare_data(const RunConfig& cfg, const std::string& run_dir,
                        bool need_flow, bool need_train_split) {
  LoadedData out;
  out.ds = generate_dataset(cfg.dataset);
  if (need_flow) {
    std::string fdir = run_dir + "/flow_cache";
    if (need_train_split)
      out.train_flows = ensure_flow_cache(out.ds.train, fdir, "train", cfg.flow,
                                          cfg.train.threads);
    out.val_flows =
        ensure_flow_cache(out.ds.val, fdir, "val", cfg.flow, cfg.train.threads);
  }
  out.view.train = &out.ds.train;
  out.view.val = &out.ds.val;
  out.view.train_flows = need_flow && need_train_split ? &out.train_flows : nullptr;
  out.view.val_flows = need_flow ? &out.val_flows : nullptr;
  out.view.mode = cfg.dataset.mode;
  out.view.n_cls = cfg.dataset.n_cls;
  out.view.t_total = cfg.dataset.t_total;
  return out;
}

int cmd_generate(const std::string& config_path, std::string out_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  if (out_dir.empty()) out_dir = default_run_dir(cfg.dataset.seed) + "/data";
  fs::create_directories(out_dir);
  Dataset ds = generate_dataset(cfg.dataset);
  save_dataset_file(ds.train, cfg.dataset, out_dir + "/train.mmld");
  save_dataset_file(ds.val, cfg.dataset, out_dir + "/val.mmld");
  std::cout << json{{"train", out_dir + "/train.mmld"},
                    {"val", out_dir + "/val.mmld"},
                    {"clips_train", ds.train.size()},
                    {"clips_val", ds.val.size()}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& method_s,
              const std::string& modality_s, const std::string& init_s,
              int64_t seed, const std::string& teacher_path,
              std::string run_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<uint64_t>(seed);
  if (run_dir.empty()) run_dir = default_run_dir(cfg.train.seed);
  fs::create_directories(run_dir + "/checkpoints");
  fs::create_directories(run_dir + "/logs");

  TrainMethod method;
  if (method_s == "solo")
    method = TrainMethod::kSolo;
  else if (method_s == "mutual")
    method = TrainMethod::kMutual;
  else if (method_s == "mars")
    method = TrainMethod::kMars;
  else if (method_s == "d3d")
    method = TrainMethod::kD3d;
  else
    throw ConfigError("config: unknown --method " + method_s);

  std::vector<Modality> modalities;
  for (const std::string& m : split_list(modality_s))
    modalities.push_back(modality_from_name(m));
  if (modalities.empty()) throw ConfigError("config: --modality required");

  std::vector<std::string> inits = split_list(init_s);
  if (inits.empty()) inits.assign(modalities.size(), "random");
  if (inits.size() != modalities.size())
    throw ConfigError("config: --init count must match --modality count");

  std::vector<ModelIo> models;
  for (size_t i = 0; i < modalities.size(); ++i) {
    ModelSpec spec = cfg.model_for(modalities[i]);
    ModelIo io;
    io.spec = spec;
    io.modality = modalities[i];
    if (inits[i] == "random") {
      io.weights = init_weights(spec, derive_seed(cfg.train.seed, 0xA00 + i));
    } else {
      ModelIo src = load_model_checkpoint(inits[i]);
      io.weights = transfer_weights(src.weights, spec);
    }
    models.push_back(std::move(io));
  }

  bool need_flow =
      std::any_of(modalities.begin(), modalities.end(),
                  [](Modality m) { return m == Modality::kFlow; });
  std::optional<ModelIo> teacher;
  if (method == TrainMethod::kMars || method == TrainMethod::kD3d) {
    if (teacher_path.empty())
      throw ConfigError("config: --teacher required for mars/d3d");
    teacher = load_model_checkpoint(teacher_path);
    need_flow = need_flow || teacher->modality == Modality::kFlow;
  }
  LoadedData data = prepare_data(cfg, run_dir, need_flow, true);

  std::vector<TrainResult> results;
  std::string tag = method_s;
  for (Modality m : modalities) tag += std::string("_") + modality_name(m);
  if (method == TrainMethod::kSolo) {
    results.push_back(train_single(models[0], data.view, cfg.train));
  } else if (method == TrainMethod::kMutual) {
    results = train_mutual(models, data.view, cfg.train);
  } else {
    results.push_back(
        train_distill(models[0], *teacher, method, data.view, cfg.train));
  }

  json summary = json::array();
  for (size_t i = 0; i < results.size(); ++i) {
    std::string stem = tag + "_" + std::to_string(i);
    std::string ckpt = run_dir + "/checkpoints/" + stem + ".ckpt";
    save_model_checkpoint(results[i].best_weights, models[i].spec,
                          models[i].modality, ckpt);
    write_metric_log(results[i].log, run_dir + "/logs/" + stem + ".jsonl");
    summary.push_back({{"checkpoint", ckpt},
                       {"hash", hash_hex(fnv1a_file(ckpt))},
                       {"best_epoch", results[i].best_epoch},
                       {"best_metric", results[i].best_metric}});
  }
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_pipeline(const std::string& config_path, const std::string& preset,
                 bool resume, std::string run_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  std::string chosen = preset.empty() ? cfg.pipeline_preset : preset;
  if (run_dir.empty()) run_dir = default_run_dir(cfg.train.seed);
  PipelineConfig pc = cfg.pipeline_config(run_dir, resume);
  PipelineResult res;
  if (chosen == "solo")
    res = run_solo_pipeline(pc);
  else if (chosen == "ensemble")
    res = run_ensemble_pipeline(pc);
  else
    throw ConfigError("config: unknown preset " + chosen);
  std::cout << json{{"manifest", res.manifest_path},
                    {"runs", res.runs.size()},
                    {"final_members", res.final_members}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpts_s,
             const std::string& spec_s, const std::string& grid_path,
             std::string run_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  int k = cfg.eval_dense_k, m = cfg.eval_uniform_m;
  if (!spec_s.empty()) parse_eval_spec(spec_s, k, m);
  if (k + m < 1) throw ConfigError("config: eval needs dense+uniform >= 1");
  if (run_dir.empty()) run_dir = default_run_dir(cfg.dataset.seed);
  fs::create_directories(run_dir);

  std::vector<std::string> paths = split_list(ckpts_s);
  if (paths.empty()) throw ConfigError("config: --checkpoints required");
  std::vector<ModelIo> members;
  for (const std::string& p : paths) members.push_back(load_model_checkpoint(p));

  bool need_flow = std::any_of(members.begin(), members.end(), [](const ModelIo& m_) {
    return m_.modality == Modality::kFlow;
  });
  LoadedData data = prepare_data(cfg, run_dir, need_flow, false);
  const auto& val = data.ds.val;
  const bool multi = cfg.dataset.mode == LabelMode::kMulti;

  // per-member scores for every validation clip
  std::vector<std::vector<std::vector<double>>> scores(members.size());
  for (size_t i = 0; i < members.size(); ++i) {
    SamplingSpec ss;
    ss.n_in = members[i].spec.n_in;
    ss.tau = cfg.train.sampling.tau;
    ss.test_k = k;
    ss.test_m = m;
    scores[i].resize(val.size());
    for (size_t c = 0; c < val.size(); ++c) {
      const ClipFlows* flows = members[i].modality == Modality::kFlow
                                   ? &data.val_flows[c]
                                   : nullptr;
      scores[i][c] = multiclip_predict(members[i].weights, members[i].spec, val[c],
                                       members[i].modality, ss, flows);
    }
  }

  auto metric_of = [&](const std::vector<std::vector<double>>& s) {
    PredictionBatch batch;
    batch.scores = s;
    for (const VideoClip& c : val) {
      batch.item_ids.push_back(c.clip_id);
      if (multi)
        batch.label_vecs.push_back(c.label_vec);
      else
        batch.labels.push_back(c.label);
    }
    return multi ? mean_average_precision(batch) : top_k_accuracy(batch, 1);
  };
  auto combine = [&](std::vector<size_t> which) {
    std::vector<std::vector<double>> out(val.size());
    for (size_t c = 0; c < val.size(); ++c) {
      std::vector<std::vector<double>> parts;
      for (size_t i : which) parts.push_back(scores[i][c]);
      out[c] = multi ? mean_scores(parts) : ensemble_predict(parts);
    }
    return out;
  };

  std::string report_path = run_dir + "/eval_report.jsonl";
  std::ofstream rep(report_path, std::ios::trunc);
  const char* metric_name = multi ? "map" : "top1";
  rep << json{{"spec", "dense:" + std::to_string(k) + ",uniform:" + std::to_string(m)},
              {"clips_per_video", k + m},
              {"num_items", val.size()}}
             .dump()
      << "\n";
  for (size_t i = 0; i < members.size(); ++i)
    rep << json{{"model", paths[i]},
                {"spec", "dense:" + std::to_string(k) + ",uniform:" + std::to_string(m)},
                {"metric", metric_name},
                {"value", metric_of(scores[i])}}
               .dump()
        << "\n";
  if (members.size() > 1) {
    std::vector<size_t> all(members.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    rep << json{{"model", "ensemble"},
                {"spec", "dense:" + std::to_string(k) + ",uniform:" + std::to_string(m)},
                {"metric", metric_name},
                {"value", metric_of(combine(all))}}
               .dump()
        << "\n";
  }

  if (!grid_path.empty()) {
    std::ofstream grid(grid_path, std::ios::trunc);
    grid << "member";
    for (const std::string& p : paths) grid << "," << p;
    grid << "\n";
    for (size_t i = 0; i < members.size(); ++i) {
      grid << paths[i];
      for (size_t j = 0; j < members.size(); ++j) {
        double v = i == j ? metric_of(scores[i]) : metric_of(combine({i, j}));
        grid << "," << v;
      }
      grid << "\n";
    }
  }
  std::cout << json{{"report", report_path}}.dump() << "\n";
  return kExitOk;
}

int cmd_plot(const std::string& logs_s, std::string out_dir) {
  std::vector<std::string> logs = split_list(logs_s);
  if (logs.empty()) throw ConfigError("config: --logs required");
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  auto series = load_metric_series(logs);
  write_series_csv(series, out_dir + "/curves.csv");
  write_series_svg(series, out_dir + "/curves.svg");
  std::cout << json{{"csv", out_dir + "/curves.csv"},
                    {"svg", out_dir + "/curves.svg"}}
                   .dump()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mutual modality learning laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, method = "solo", modality = "rgb";
  std::string init = "random", teacher, preset, ckpts, spec, grid, logs;
  int64_t seed = -1;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "write dataset files");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "train one model or a mutual group");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--method", method, "solo|mutual|mars|d3d");
  tr->add_option("--modality", modality, "comma list: rgb,flow,diff");
  tr->add_option("--init", init, "comma list: random or checkpoint paths");
  tr->add_option("--teacher", teacher, "teacher checkpoint (mars/d3d)");
  tr->add_option("--seed", seed, "override train seed");
  tr->add_option("--run-dir", run_dir, "run directory");

  auto* pl = app.add_subcommand("pipeline", "run a multi-stage pipeline");
  pl->add_option("--config", config_path, "config file")->required();
  pl->add_option("--preset", preset, "solo|ensemble");
  pl->add_flag("--resume", resume, "reuse completed stages in run dir");
  pl->add_option("--run-dir", run_dir, "run directory");

  auto* ev = app.add_subcommand("eval", "evaluate checkpoints and ensembles");
  ev->add_option("--config", config_path, "config file")->required();
  ev->add_option("--checkpoints", ckpts, "comma list of checkpoints")->required();
  ev->add_option("--spec", spec, "e.g. dense:1,uniform:2");
  ev->add_option("--grid", grid, "write pairwise ensemble grid CSV");
  ev->add_option("--run-dir", run_dir, "run directory");

  auto* plt = app.add_subcommand("plot", "emit CSV + SVG curves from logs");
  plt->add_option("--logs", logs, "comma list of metric logs")->required();
  plt->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_dir);
    if (tr->parsed())
      return cmd_train(config_path, method, modality, init, seed, teacher, run_dir);
    if (pl->parsed()) return cmd_pipeline(config_path, preset, resume, run_dir);
    if (ev->parsed()) return cmd_eval(config_path, ckpts, spec, grid, run_dir);
    if (plt->parsed()) return cmd_plot(logs, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: stage: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
