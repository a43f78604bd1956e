#pragma once

#include <string>
#include <vector>

#include "mml/modality.hpp"
#include "mml/net.hpp"
#include "mml/sampling.hpp"
#include "mml/synthvid.hpp"
#include "mml/train.hpp"

namespace mml {

// Parse failures carry a 1-based line number from the source document.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON run configuration with sections dataset / model / train / pipeline /
// eval / flow. Every field has a default; unknown keys are rejected.
struct RunConfig {
  DatasetConfig dataset;
  ModelSpec model;  // n_cls and head follow the dataset; input_channels the modality
  TrainConfig train;
  std::vector<Modality> pipeline_modalities = {Modality::kRgb, Modality::kFlow,
                                               Modality::kDiff};
  std::string pipeline_preset = "solo";
  int eval_dense_k = 1;
  int eval_uniform_m = 2;
  Tvl1Params flow;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);

  // Spec for a model consuming the given modality under this config.
  ModelSpec model_for(Modality m) const;

  PipelineConfig pipeline_config(const std::string& run_dir, bool resume) const;
};

}  // namespace mml
