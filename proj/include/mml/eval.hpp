#pragma once

#include <cstdint>
#include <vector>

#include "mml/losses.hpp"
#include "mml/modality.hpp"
#include "mml/net.hpp"
#include "mml/sampling.hpp"
#include "mml/synthvid.hpp"

namespace mml {

// Scores are probabilities (single-label, rows sum to 1) or sigmoid scores
// (multi-label).
struct PredictionBatch {
  std::vector<std::vector<double>> scores;       // [items][n_cls]
  std::vector<int> labels;                       // single-label
  std::vector<std::vector<uint8_t>> label_vecs;  // multi-label
  std::vector<int> item_ids;

  bool multi_label() const { return !label_vecs.empty(); }
  size_t size() const { return scores.size(); }
};

// Fraction of items whose label is among the k best scores. Ties resolve in
// favor of the lower class index.
double top_k_accuracy(const PredictionBatch& preds, int k);

// Per class: items ranked by score descending (ties by item order), AP = mean
// of precision@rank over positive ranks. Classes without positives are
// excluded from the mean and reported through excluded_out.
double mean_average_precision(const PredictionBatch& preds,
                              std::vector<int>* excluded_out = nullptr);

// Runs the model on every deterministic test clip (k dense + m uniform) and
// averages the per-clip scores (post-softmax probabilities, or sigmoid scores
// for a BCE head).
std::vector<double> multiclip_predict(const TensorMap& weights,
                                      const ModelSpec& spec,
                                      const VideoClip& clip, Modality modality,
                                      const SamplingSpec& sampling,
                                      const ClipFlows* flows = nullptr);

// Unweighted arithmetic mean of member probabilities, renormalized.
ProbVector ensemble_predict(const std::vector<ProbVector>& member_outputs);

// Element-wise mean without renormalization (multi-label score averaging).
std::vector<double> mean_scores(const std::vector<std::vector<double>>& members);

}  // namespace mml
