#include "mml/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mml {

bool is_prob_vector(const ProbVector& p) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= kProbFloor)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= 1e-6;
}

namespace {

ProbVector floor_and_renormalize(ProbVector p) {
  double sum = 0.0;
  for (double& x : p) {
    x = std::max(x, kProbFloor);
    sum += x;
  }
  // renormalize, then re-clamp: the division can push a floored entry a hair
  // under the floor, and the re-clamp perturbs the sum by far less than 1e-6
  for (double& x : p) x = std::max(x / sum, kProbFloor);
  return p;
}

}  // namespace

ProbVector softmax_d(const std::vector<double>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw std::invalid_argument("softmax: non-finite logit");
  ProbVector p(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return floor_and_renormalize(std::move(p));
}

ProbVector softmax(const std::vector<float>& logits) {
  std::vector<double> d(logits.begin(), logits.end());
  return softmax_d(d);
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<double> sigmoid_scores(const std::vector<float>& logits) {
  std::vector<double> s(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    s[i] = std::clamp(sigmoid(logits[i]), kProbFloor, 1.0 - kProbFloor);
  return s;
}

double cross_entropy(const std::vector<ProbVector>& probs,
                     const std::vector<int>& labels, LossNorm norm) {
  if (probs.empty() || probs.size() != labels.size())
    throw std::invalid_argument("cross_entropy: batch size mismatch");
  const int n_cls = static_cast<int>(probs[0].size());
  double sum = 0.0;
  for (size_t b = 0; b < probs.size(); ++b) {
    int y = labels[b];
    if (y < 0 || y >= n_cls)
      throw std::out_of_range("cross_entropy: label out of range");
    sum += -std::log(probs[b][static_cast<size_t>(y)]);
  }
  double batchmean = sum / static_cast<double>(probs.size());
  return norm == LossNorm::kBatchMean ? batchmean : batchmean / n_cls;
}

double kl_divergence(const ProbVector& target, const ProbVector& pred) {
  if (target.size() != pred.size() || target.empty())
    throw std::invalid_argument("kl_divergence: size mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < target.size(); ++i)
    sum += target[i] * std::log(target[i] / pred[i]);
  return sum;
}

double kl_divergence(const std::vector<ProbVector>& targets,
                     const std::vector<ProbVector>& preds, LossNorm norm) {
  if (targets.empty() || targets.size() != preds.size())
    throw std::invalid_argument("kl_divergence: batch size mismatch");
  double sum = 0.0;
  for (size_t b = 0; b < targets.size(); ++b)
    sum += kl_divergence(targets[b], preds[b]);
  double batchmean = sum / static_cast<double>(targets.size());
  return norm == LossNorm::kBatchMean
             ? batchmean
             : batchmean / static_cast<double>(targets[0].size());
}

LossReport mutual_loss(const ProbVector& p_self,
                       const std::vector<ProbVector>& p_peers, int label,
                       LossNorm norm) {
  if (p_peers.empty()) throw std::invalid_argument("mutual_loss: no peers");
  ProbVector target(p_self.size(), 0.0);
  for (const ProbVector& p : p_peers) {
    if (p.size() != p_self.size())
      throw std::invalid_argument("mutual_loss: peer size mismatch");
    for (size_t i = 0; i < p.size(); ++i) target[i] += p[i];
  }
  for (double& x : target) x /= static_cast<double>(p_peers.size());

  LossReport r;
  r.normalization = norm;
  r.ce_or_bce = cross_entropy({p_self}, {label}, norm);
  r.kl = kl_divergence({target}, {p_self}, norm);
  r.distill = 0.0;
  r.total = r.ce_or_bce + r.kl + r.distill;
  return r;
}

double multilabel_bce(const std::vector<std::vector<float>>& logits,
                      const std::vector<std::vector<uint8_t>>& label_vecs,
                      LossNorm norm) {
  if (logits.empty() || logits.size() != label_vecs.size())
    throw std::invalid_argument("multilabel_bce: batch size mismatch");
  const size_t n_cls = logits[0].size();
  double sum = 0.0;
  for (size_t b = 0; b < logits.size(); ++b) {
    if (label_vecs[b].size() != n_cls)
      throw std::invalid_argument("multilabel_bce: label size mismatch");
    for (size_t i = 0; i < n_cls; ++i) {
      uint8_t y = label_vecs[b][i];
      if (y > 1) throw std::invalid_argument("multilabel_bce: non-binary label");
      double l = logits[b][i];
      // max(l,0) - l*y + log(1 + exp(-|l|))
      sum += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    }
  }
  double batchmean = sum / static_cast<double>(logits.size());
  return norm == LossNorm::kBatchMean ? batchmean
                                      : batchmean / static_cast<double>(n_cls);
}

double multilabel_kl(const std::vector<std::vector<double>>& target_scores,
                     const std::vector<std::vector<double>>& pred_scores) {
  if (target_scores.empty() || target_scores.size() != pred_scores.size())
    throw std::invalid_argument("multilabel_kl: batch size mismatch");
  const size_t n_cls = target_scores[0].size();
  double sum = 0.0;
  for (size_t b = 0; b < target_scores.size(); ++b)
    for (size_t i = 0; i < n_cls; ++i) {
      double t = target_scores[b][i], q = pred_scores[b][i];
      sum += t * std::log(t / q) + (1.0 - t) * std::log((1.0 - t) / (1.0 - q));
    }
  return sum / static_cast<double>(target_scores.size()) /
         static_cast<double>(n_cls);
}

namespace {

double squared_distance_loss(const std::vector<std::vector<float>>& a,
                             const std::vector<std::vector<float>>& b,
                             double weight, bool n_cls_divide, int n_cls,
                             const char* what) {
  if (a.empty() || a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": batch size mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size())
      throw std::invalid_argument(std::string(what) + ": dim mismatch");
    for (size_t j = 0; j < a[i].size(); ++j) {
      double d = static_cast<double>(a[i][j]) - static_cast<double>(b[i][j]);
      sum += d * d;
    }
  }
  double out = weight * sum / static_cast<double>(a.size());
  if (n_cls_divide) out /= static_cast<double>(n_cls);
  return out;
}

}  // namespace

double mars_loss(const std::vector<std::vector<float>>& features_self,
                 const std::vector<std::vector<float>>& features_teacher,
                 double weight, bool n_cls_divide, int n_cls) {
  return squared_distance_loss(features_self, features_teacher, weight,
                               n_cls_divide, n_cls, "mars_loss");
}

double d3d_loss(const std::vector<std::vector<float>>& logits_self,
                const std::vector<std::vector<float>>& logits_teacher,
                double weight, bool n_cls_divide, int n_cls) {
  return squared_distance_loss(logits_self, logits_teacher, weight,
                               n_cls_divide, n_cls, "d3d_loss");
}

void ce_grad(const ProbVector& p, int label, float scale,
             std::vector<float>& grad) {
  if (grad.size() != p.size()) throw std::invalid_argument("ce_grad: size");
  for (size_t i = 0; i < p.size(); ++i) {
    double y = static_cast<int>(i) == label ? 1.0 : 0.0;
    grad[i] += scale * static_cast<float>(p[i] - y);
  }
}

void kl_grad(const ProbVector& target, const ProbVector& p, float scale,
             std::vector<float>& grad) {
  if (grad.size() != p.size() || target.size() != p.size())
    throw std::invalid_argument("kl_grad: size");
  for (size_t i = 0; i < p.size(); ++i)
    grad[i] += scale * static_cast<float>(p[i] - target[i]);
}

void bce_grad(const std::vector<float>& logits, const std::vector<uint8_t>& y,
              float scale, std::vector<float>& grad) {
  if (grad.size() != logits.size() || y.size() != logits.size())
    throw std::invalid_argument("bce_grad: size");
  for (size_t i = 0; i < logits.size(); ++i)
    grad[i] += scale * static_cast<float>(sigmoid(logits[i]) - y[i]);
}

void multilabel_kl_grad(const std::vector<double>& target_scores,
                        const std::vector<double>& pred_scores, float scale,
                        std::vector<float>& grad) {
  if (grad.size() != pred_scores.size() ||
      target_scores.size() != pred_scores.size())
    throw std::invalid_argument("multilabel_kl_grad: size");
  for (size_t i = 0; i < pred_scores.size(); ++i)
    grad[i] += scale * static_cast<float>(pred_scores[i] - target_scores[i]);
}

void l2_grad(const std::vector<float>& x, const std::vector<float>& t,
             float scale, std::vector<float>& grad) {
  if (grad.size() != x.size() || t.size() != x.size())
    throw std::invalid_argument("l2_grad: size");
  for (size_t i = 0; i < x.size(); ++i)
    grad[i] += scale * 2.0f * (x[i] - t[i]);
}

}  // namespace mml
