#pragma once

#include <cstdint>
#include <vector>

namespace mml {

// Probability floor applied before any log; keeps every loss finite without
// measurably changing values.
constexpr double kProbFloor = 1e-7;

enum class LossNorm { kBatchMean, kMean };

// Entries >= kProbFloor, summing to 1 within 1e-6.
using ProbVector = std::vector<double>;

bool is_prob_vector(const ProbVector& p);

// Max-subtracted softmax, clamped to the floor and renormalized.
ProbVector softmax(const std::vector<float>& logits);
ProbVector softmax_d(const std::vector<double>& logits);

double sigmoid(double x);

// Per-class sigmoid scores with the probability floor applied.
std::vector<double> sigmoid_scores(const std::vector<float>& logits);

// (1/B) * sum_b -log p_b[label_b].
double cross_entropy(const std::vector<ProbVector>& probs,
                     const std::vector<int>& labels,
                     LossNorm norm = LossNorm::kBatchMean);

// Single pair: sum_n target_n * log(target_n / pred_n).
double kl_divergence(const ProbVector& target, const ProbVector& pred);

// Batch reduction by B (batchmean) or by B*N (mean; computed as
// batchmean / N so the two regimes differ by an exact factor).
double kl_divergence(const std::vector<ProbVector>& targets,
                     const std::vector<ProbVector>& preds, LossNorm norm);

struct LossReport {
  double total = 0.0;
  double ce_or_bce = 0.0;
  double kl = 0.0;
  double distill = 0.0;
  LossNorm normalization = LossNorm::kBatchMean;
};

// CE plus KL(mean of peers || p_self); peers are constants (no gradient flows
// into them). M = 2 reduces to CE(p1,y) + KL(p2||p1) term for term.
LossReport mutual_loss(const ProbVector& p_self,
                       const std::vector<ProbVector>& p_peers, int label,
                       LossNorm norm = LossNorm::kBatchMean);

// (1/(B*N)) * sum of stabilized binary cross-entropy terms.
double multilabel_bce(const std::vector<std::vector<float>>& logits,
                      const std::vector<std::vector<uint8_t>>& label_vecs,
                      LossNorm norm = LossNorm::kMean);

// Bernoulli KL between per-class sigmoid scores, target constant,
// summed over classes, divided by B*N. Multi-label analog of the mutual term.
double multilabel_kl(const std::vector<std::vector<double>>& target_scores,
                     const std::vector<std::vector<double>>& pred_scores);

// weight * ||f_self - f_teacher||^2 / B, further divided by n_cls when
// n_cls_divide is set (multi-label regime).
double mars_loss(const std::vector<std::vector<float>>& features_self,
                 const std::vector<std::vector<float>>& features_teacher,
                 double weight, bool n_cls_divide, int n_cls);

// Same as mars_loss but on logits; default weight 1.
double d3d_loss(const std::vector<std::vector<float>>& logits_self,
                const std::vector<std::vector<float>>& logits_teacher,
                double weight, bool n_cls_divide, int n_cls);

// --- gradient helpers (analytic, w.r.t. the self model's raw outputs) ------
// Each accumulates scale * dLoss/dx into grad (size must match).

// d/dlogits of -log softmax(l)[label]: p - onehot.
void ce_grad(const ProbVector& p, int label, float scale, std::vector<float>& grad);

// d/dlogits of KL(target || softmax(l)) with target constant: p - target.
void kl_grad(const ProbVector& target, const ProbVector& p, float scale,
             std::vector<float>& grad);

// d/dlogits of a sample's summed BCE terms: sigma(l) - y.
void bce_grad(const std::vector<float>& logits, const std::vector<uint8_t>& y,
              float scale, std::vector<float>& grad);

// d/dlogits of a sample's summed Bernoulli KL terms: sigma_self - sigma_target.
void multilabel_kl_grad(const std::vector<double>& target_scores,
                        const std::vector<double>& pred_scores, float scale,
                        std::vector<float>& grad);

// d/dx of ||x - t||^2: 2 (x - t).
void l2_grad(const std::vector<float>& x, const std::vector<float>& t,
             float scale, std::vector<float>& grad);

}  // namespace mml
