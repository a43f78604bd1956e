#include "mml/sampling.hpp"

#include <algorithm>
#include <stdexcept>

namespace mml {

void SamplingSpec::validate(int t_total) const {
  if (n_in < 2) throw std::invalid_argument("sampling: n_in must be >= 2");
  if (tau < 1) throw std::invalid_argument("sampling: tau must be >= 1");
  if (static_cast<long>(tau) * (n_in - 1) >= t_total)
    throw std::invalid_argument("sampling: tau must satisfy tau < T/(n_in-1)");
  if (test_k < 0 || test_m < 0 || test_k + test_m < 1)
    throw std::invalid_argument("sampling: need test_k + test_m >= 1");
}

std::vector<int> uniform_train_sample(int t_total, int n_in, Rng& rng) {
  if (t_total < n_in)
    throw std::invalid_argument("uniform_train_sample: t_total < n_in");
  std::vector<int> idx(static_cast<size_t>(n_in));
  for (int i = 0; i < n_in; ++i) {
    long lo = static_cast<long>(i) * t_total / n_in;
    long hi = static_cast<long>(i + 1) * t_total / n_in;  // exclusive
    idx[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(lo, hi - 1));
  }
  return idx;
}

std::vector<int> dense_train_sample(int t_total, int n_in, int tau, Rng& rng) {
  long span = static_cast<long>(tau) * (n_in - 1);
  if (span >= t_total)
    throw std::invalid_argument("dense_train_sample: tau*(n_in-1) >= t_total");
  int start = static_cast<int>(rng.uniform_int(0, t_total - 1 - span));
  std::vector<int> idx(static_cast<size_t>(n_in));
  for (int j = 0; j < n_in; ++j) idx[static_cast<size_t>(j)] = start + tau * j;
  return idx;
}

std::vector<int> mixed_train_sample(int t_total, int n_in, int tau, Rng& rng) {
  bool dense = rng.coin();
  return dense ? dense_train_sample(t_total, n_in, tau, rng)
               : uniform_train_sample(t_total, n_in, rng);
}

std::vector<int> train_sample(SamplingStrategy strategy, int t_total, int n_in,
                              int tau, Rng& rng) {
  switch (strategy) {
    case SamplingStrategy::kUniform: return uniform_train_sample(t_total, n_in, rng);
    case SamplingStrategy::kDense: return dense_train_sample(t_total, n_in, tau, rng);
    case SamplingStrategy::kMixed: return mixed_train_sample(t_total, n_in, tau, rng);
  }
  throw std::logic_error("train_sample: bad strategy");
}

std::vector<std::vector<int>> test_sample(int t_total, int n_in, int tau, int k,
                                          int m) {
  if (n_in < 1 || tau < 1 || k < 0 || m < 0 || k + m < 1)
    throw std::invalid_argument("test_sample: bad arguments");
  long t_prime = static_cast<long>(t_total) - static_cast<long>(tau) * (n_in - 1);
  if (k > 0 && t_prime <= 0)
    throw std::invalid_argument("test_sample: tau*(n_in-1) >= t_total");
  if (m > 0 && t_total < n_in)
    throw std::invalid_argument("test_sample: t_total < n_in");

  std::vector<std::vector<int>> clips;
  clips.reserve(static_cast<size_t>(k + m));
  for (int i = 0; i < k; ++i) {
    long start = k == 1 ? t_prime / 2 : i * t_prime / k;
    std::vector<int> idx(static_cast<size_t>(n_in));
    for (int j = 0; j < n_in; ++j)
      idx[static_cast<size_t>(j)] = static_cast<int>(start + static_cast<long>(tau) * j);
    clips.push_back(std::move(idx));
  }
  for (int i = 0; i < m; ++i) {
    std::vector<int> idx(static_cast<size_t>(n_in));
    // floor((j + i/m) * T / n_in) == floor((j*m + i) * T / (n_in * m))
    for (int j = 0; j < n_in; ++j)
      idx[static_cast<size_t>(j)] = static_cast<int>(
          (static_cast<long>(j) * m + i) * t_total / (static_cast<long>(n_in) * m));
    clips.push_back(std::move(idx));
  }
  return clips;
}

std::vector<int> align_modalities(const std::vector<int>& base_indices,
                                  int n_short, int n_long, Rng& rng) {
  if (n_long < n_short)
    throw std::invalid_argument("align_modalities: n_long < n_short");
  for (int i : base_indices)
    if (i < 0 || i >= n_short)
      throw std::invalid_argument("align_modalities: base index out of range");
  int xi = static_cast<int>(rng.uniform_int(0, n_long - n_short));
  std::vector<int> out(base_indices);
  for (int& i : out) {
    i += xi;
    if (i >= n_long) throw std::logic_error("align_modalities: shift overflow");
  }
  return out;
}

}  // namespace mml
