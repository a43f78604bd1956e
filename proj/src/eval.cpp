#include "mml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mml {

double top_k_accuracy(const PredictionBatch& preds, int k) {
  if (preds.multi_label())
    throw std::invalid_argument("top_k_accuracy: needs a single-label batch");
  if (preds.size() == 0 || preds.labels.size() != preds.size())
    throw std::invalid_argument("top_k_accuracy: empty or mismatched batch");
  const int n_cls = static_cast<int>(preds.scores[0].size());
  if (k < 1 || k > n_cls) throw std::out_of_range("top_k_accuracy: k out of range");

  int hits = 0;
  for (size_t b = 0; b < preds.size(); ++b) {
    const auto& s = preds.scores[b];
    int label = preds.labels[b];
    double ls = s[static_cast<size_t>(label)];
    int rank = 0;  // classes strictly ahead of the label
    for (int c = 0; c < n_cls; ++c) {
      if (c == label) continue;
      if (s[static_cast<size_t>(c)] > ls || (s[static_cast<size_t>(c)] == ls && c < label)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mean_average_precision(const PredictionBatch& preds,
                              std::vector<int>* excluded_out) {
  if (!preds.multi_label())
    throw std::invalid_argument("mean_average_precision: needs a multi-label batch");
  if (preds.size() == 0 || preds.label_vecs.size() != preds.size())
    throw std::invalid_argument("mean_average_precision: empty or mismatched batch");
  const size_t n_cls = preds.scores[0].size();

  double ap_sum = 0.0;
  int included = 0;
  if (excluded_out) excluded_out->clear();
  for (size_t c = 0; c < n_cls; ++c) {
    int positives = 0;
    for (const auto& y : preds.label_vecs) positives += y[c];
    if (positives == 0) {
      if (excluded_out) excluded_out->push_back(static_cast<int>(c));
      continue;
    }
    std::vector<size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return preds.scores[a][c] > preds.scores[b][c];
    });
    double ap = 0.0;
    int seen_pos = 0;
    for (size_t r = 0; r < order.size(); ++r) {
      if (preds.label_vecs[order[r]][c]) {
        ++seen_pos;
        ap += static_cast<double>(seen_pos) / static_cast<double>(r + 1);
      }
    }
    ap_sum += ap / positives;
    ++included;
  }
  if (included == 0)
    throw std::invalid_argument("mean_average_precision: no positives in batch");
  return ap_sum / included;
}

std::vector<double> multiclip_predict(const TensorMap& weights,
                                      const ModelSpec& spec,
                                      const VideoClip& clip, Modality modality,
                                      const SamplingSpec& sampling,
                                      const ClipFlows* flows) {
  const int frames = modality_frame_count(modality, clip.t_total);
  auto clips = test_sample(frames, spec.n_in, sampling.tau, sampling.test_k,
                           sampling.test_m);
  std::vector<double> acc(static_cast<size_t>(spec.n_cls), 0.0);
  for (const auto& indices : clips) {
    ModalityTensor mt = clip_to_modality(clip, modality, indices, flows);
    ForwardOut out = forward(weights, spec, mt.data, NetMode::kEval);
    std::vector<double> s = spec.head == HeadKind::kSoftmaxCe
                                ? softmax(out.logits)
                                : sigmoid_scores(out.logits);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += s[i];
  }
  for (double& v : acc) v /= static_cast<double>(clips.size());
  return acc;
}

ProbVector ensemble_predict(const std::vector<ProbVector>& member_outputs) {
  if (member_outputs.empty())
    throw std::invalid_argument("ensemble_predict: empty member list");
  ProbVector mean = mean_scores(member_outputs);
  double sum = std::accumulate(mean.begin(), mean.end(), 0.0);
  if (sum <= 0.0) throw std::invalid_argument("ensemble_predict: degenerate scores");
  for (double& v : mean) v /= sum;
  return mean;
}

std::vector<double> mean_scores(const std::vector<std::vector<double>>& members) {
  if (members.empty()) throw std::invalid_argument("mean_scores: empty member list");
  const size_t n = members[0].size();
  std::vector<double> mean(n, 0.0);
  for (const auto& m : members) {
    if (m.size() != n) throw std::invalid_argument("mean_scores: size mismatch");
    for (size_t i = 0; i < n; ++i) mean[i] += m[i];
  }
  for (double& v : mean) v /= static_cast<double>(members.size());
  return mean;
}

}  // namespace mml
