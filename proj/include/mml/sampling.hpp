#pragma once

#include <vector>

#include "mml/rng.hpp"

namespace mml {

enum class SamplingStrategy { kUniform, kDense, kMixed };

struct SamplingSpec {
  SamplingStrategy strategy = SamplingStrategy::kMixed;
  int n_in = 8;    // temporal input length
  int tau = 1;     // dense stride, frames
  int test_k = 1;  // dense clips at test time
  int test_m = 2;  // uniform clips at test time

  // Checks the invariants against a concrete frame count.
  void validate(int t_total) const;  // throws std::invalid_argument
};

// One frame drawn uniformly from each of n_in equal parts of [0, t_total).
std::vector<int> uniform_train_sample(int t_total, int n_in, Rng& rng);

// n_in frames at stride tau from a uniformly random start.
std::vector<int> dense_train_sample(int t_total, int n_in, int tau, Rng& rng);

// Fair coin chooses uniform or dense.
std::vector<int> mixed_train_sample(int t_total, int n_in, int tau, Rng& rng);

std::vector<int> train_sample(SamplingStrategy strategy, int t_total, int n_in,
                              int tau, Rng& rng);

// Deterministic test-time clips: k dense (start floor(i*T'/k), midpoint rule
// at k=1, T' = T - tau*(n_in-1)) followed by m uniform (index
// floor((j + i/m)*T/n_in), evaluated in exact integer arithmetic).
std::vector<std::vector<int>> test_sample(int t_total, int n_in, int tau, int k,
                                          int m);

// One offset xi ~ unif{0..n_long-n_short} added to every base index, so the
// longer modality sees the same temporal window as the shorter one.
std::vector<int> align_modalities(const std::vector<int>& base_indices,
                                  int n_short, int n_long, Rng& rng);

}  // namespace mml
