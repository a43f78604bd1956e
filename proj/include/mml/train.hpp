#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mml/eval.hpp"
#include "mml/losses.hpp"
#include "mml/modality.hpp"
#include "mml/net.hpp"
#include "mml/sampling.hpp"
#include "mml/synthvid.hpp"
#include "mml/tensor.hpp"

namespace mml {

// Thrown when a loss goes non-finite; the CLI maps it to its own exit code.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TrainMethod { kSolo, kMutual, kMars, kD3d };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> lr_milestones = {20, 25};
  double lr_factor = 0.1;
  uint64_t seed = 1;
  SamplingSpec sampling;
  double distill_weight = -1.0;  // <0: method default (50 MARS, 1 D3D)
  int threads = 0;               // 0: hardware concurrency
  int val_dense_k = 0;           // per-epoch validation clips
  int val_uniform_m = 1;

  void validate() const;
  double lr_at(int epoch) const;
};

// One model participating in a run: its spec, input modality and weights.
struct ModelIo {
  ModelSpec spec;
  Modality modality = Modality::kRgb;
  TensorMap weights;
};

// v <- momentum*v + g + wd*w ; w <- w - lr*v. Velocity entries are created on
// first use; only tensors named in grads are touched.
void sgd_step(TensorMap& weights, const TensorMap& grads, TensorMap& velocity,
              double lr, double momentum, double weight_decay);

struct EpochLog {
  int epoch = 0;
  int model = 0;
  std::string split;  // "train" | "val"
  double loss = 0, ce_or_bce = 0, kl = 0, distill = 0;
  double top1 = -1, top5 = -1, map = -1;
};

struct TrainResult {
  TensorMap best_weights;
  int best_epoch = -1;
  double best_metric = -1.0;  // val top-1, or mAP in the multi-label regime
  TensorMap final_weights;
  std::vector<EpochLog> log;
};

// Shared view of the data a run trains on. Flow tensors require the per-clip
// flow fields of every split they touch.
struct TrainData {
  const std::vector<VideoClip>* train = nullptr;
  const std::vector<VideoClip>* val = nullptr;
  const std::vector<ClipFlows>* train_flows = nullptr;
  const std::vector<ClipFlows>* val_flows = nullptr;
  LabelMode mode = LabelMode::kSingle;
  int n_cls = 0;
  int t_total = 0;
};

TrainResult train_single(const ModelIo& init, const TrainData& data,
                         const TrainConfig& cfg);

// Joint mutual learning: one shared base index draw per clip per step, one
// xi for the longer modalities, peers detached, all models stepped together.
// Rejects any pair with identical modality and bit-identical weights.
std::vector<TrainResult> train_mutual(const std::vector<ModelIo>& inits,
                                      const TrainData& data,
                                      const TrainConfig& cfg);

// Task loss plus MARS (feature l2, weight 50) or D3D (logit l2, weight 1)
// against a frozen teacher fed the aligned other-modality input.
TrainResult train_distill(const ModelIo& student, const ModelIo& teacher,
                          TrainMethod method, const TrainData& data,
                          const TrainConfig& cfg);

// --- pipelines --------------------------------------------------------------

struct PipelineRun {
  int stage = 0;
  std::string run_id;
  std::string method;    // "ce" | "ml" | "mml"
  std::string modality;
  uint64_t train_seed = 0;
  std::string init_from;  // "random:<seed>" or a checkpoint path
  std::string checkpoint;
  std::string metrics_log;
  std::string hash;  // checkpoint content hash
  int best_epoch = -1;
  double best_metric = -1.0;
};

struct PipelineResult {
  std::vector<PipelineRun> runs;
  std::string manifest_path;
  // run_id of the final per-modality models, in modality order
  std::vector<std::string> final_members;
};

struct PipelineConfig {
  DatasetConfig dataset;
  ModelSpec model;  // input_channels is overwritten per modality
  TrainConfig train;
  std::vector<Modality> modalities = {Modality::kRgb, Modality::kFlow,
                                      Modality::kDiff};
  Tvl1Params flow_params;
  std::string run_dir = "runs/pipeline";
  bool resume = false;
};

// Fig-style three-stage pipeline for the best single-modality models:
// 2 solo RGB runs, one RGB+RGB mutual launch, one M-modality mutual launch
// initialized from a single stage-2 model.
PipelineResult run_solo_pipeline(const PipelineConfig& cfg);

// Ensemble pipeline: 2 solo RGB runs, two RGB+RGB mutual launches from the
// same pair of inits, then a same-modality mutual pair per modality seeded
// with one model from each stage-2 launch.
PipelineResult run_ensemble_pipeline(const PipelineConfig& cfg);

// Serialize per-epoch logs as JSON lines.
void write_metric_log(const std::vector<EpochLog>& log, const std::string& path);

// Checkpoint container plus a JSON sidecar (<path>.json) recording the spec
// and modality, so eval can reload a model from the path alone.
void save_model_checkpoint(const TensorMap& weights, const ModelSpec& spec,
                           Modality modality, const std::string& path);
ModelIo load_model_checkpoint(const std::string& path);

}  // namespace mml
