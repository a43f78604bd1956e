#include <doctest.h>

#include <algorithm>
#include <vector>

#include "mml/rng.hpp"
#include "mml/sampling.hpp"
#include "oracles.hpp"

using namespace mml;

TEST_CASE("uniform sampling with unit parts is the identity") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto idx = uniform_train_sample(8, 8, rng);
    for (int i = 0; i < 8; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
  }
}

TEST_CASE("uniform sampling stays inside enumerated part boundaries") {
  Rng rng(11);
  for (int rep = 0; rep < 10000; ++rep) {
    auto idx = uniform_train_sample(16, 4, rng);
    for (int i = 0; i < 4; ++i) {
      CHECK(idx[static_cast<size_t>(i)] >= 4 * i);
      CHECK(idx[static_cast<size_t>(i)] <= 4 * i + 3);
    }
  }
}

TEST_CASE("uniform sampling is uniform within each part (chi-squared)") {
  Rng rng(17);
  const int draws = 10000;
  std::vector<int> counts(16, 0);  // 4 parts x 4 offsets
  for (int rep = 0; rep < draws; ++rep) {
    auto idx = uniform_train_sample(16, 4, rng);
    for (int i = 0; i < 4; ++i)
      ++counts[static_cast<size_t>(i * 4 + (idx[static_cast<size_t>(i)] - 4 * i))];
  }
  // 16 cells, each expected draws*4/16
  double stat = oracles::chi2_statistic(counts, draws * 4 / 16.0);
  CHECK(stat < oracles::chi2_crit_99(15));
}

TEST_CASE("dense sampling: single valid start and stride structure") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto idx = dense_train_sample(8, 8, 1, rng);
    for (int i = 0; i < 8; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
  }
  std::vector<int> starts;
  for (int rep = 0; rep < 2000; ++rep) {
    auto idx = dense_train_sample(10, 4, 2, rng);
    CHECK(idx[0] >= 0);
    CHECK(idx[0] <= 3);
    for (int i = 1; i < 4; ++i)
      CHECK(idx[static_cast<size_t>(i)] - idx[static_cast<size_t>(i - 1)] == 2);
    CHECK(idx[3] <= 9);
    starts.push_back(idx[0]);
  }
  CHECK(*std::min_element(starts.begin(), starts.end()) == 0);
  CHECK(*std::max_element(starts.begin(), starts.end()) == 3);
  CHECK_THROWS_AS(dense_train_sample(8, 8, 2, rng), std::invalid_argument);
}

TEST_CASE("mixed sampling delegates on a fair coin (50% +- 2%)") {
  Rng rng(23);
  int dense_count = 0;
  const int draws = 10000;
  for (int rep = 0; rep < draws; ++rep) {
    Rng replay = rng;  // replays the same stream: coin first, then delegate
    auto idx = mixed_train_sample(12, 4, 3, rng);
    bool dense = replay.coin();
    auto expected = dense ? dense_train_sample(12, 4, 3, replay)
                          : uniform_train_sample(12, 4, replay);
    CHECK(idx == expected);
    if (dense) ++dense_count;
  }
  double frac = static_cast<double>(dense_count) / draws;
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);
}

TEST_CASE("mixed sampling degenerate case gives the identity either way") {
  Rng rng(29);
  for (int rep = 0; rep < 50; ++rep) {
    auto idx = mixed_train_sample(4, 4, 1, rng);
    for (int i = 0; i < 4; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
  }
}

TEST_CASE("seeded rng reproduces the index stream") {
  Rng a(77), b(77);
  for (int rep = 0; rep < 100; ++rep)
    CHECK(mixed_train_sample(20, 6, 2, a) == mixed_train_sample(20, 6, 2, b));
}

TEST_CASE("test sampling matches hand-enumerated tuples") {
  // uniform only: floor((j + i/m) * T / N)
  auto u2 = test_sample(10, 4, 1, 0, 2);
  REQUIRE(u2.size() == 2);
  CHECK(u2[0] == std::vector<int>{0, 2, 5, 7});
  CHECK(u2[1] == std::vector<int>{1, 3, 6, 8});

  // dense k=1 midpoint rule: T'=7, start floor(7/2)=3
  auto d1 = test_sample(10, 4, 1, 1, 0);
  REQUIRE(d1.size() == 1);
  CHECK(d1[0] == std::vector<int>{3, 4, 5, 6});

  // dense k=2: T'=16-2*3=10, starts floor(0)=0 and floor(10/2)=5, stride 2
  auto d2 = test_sample(16, 4, 2, 2, 0);
  REQUIRE(d2.size() == 2);
  CHECK(d2[0] == std::vector<int>{0, 2, 4, 6});
  CHECK(d2[1] == std::vector<int>{5, 7, 9, 11});

  // dense k=3 over T'=9: starts 0, 3, 6
  auto d3 = test_sample(12, 4, 1, 3, 0);
  REQUIRE(d3.size() == 3);
  CHECK(d3[0] == std::vector<int>{0, 1, 2, 3});
  CHECK(d3[1] == std::vector<int>{3, 4, 5, 6});
  CHECK(d3[2] == std::vector<int>{6, 7, 8, 9});

  // uniform m=3 with T=9, N=3: floor((3j + i) * 9 / 9) = 3j + i
  auto u3 = test_sample(9, 3, 1, 0, 3);
  REQUIRE(u3.size() == 3);
  CHECK(u3[0] == std::vector<int>{0, 3, 6});
  CHECK(u3[1] == std::vector<int>{1, 4, 7});
  CHECK(u3[2] == std::vector<int>{2, 5, 8});

  // mixed request: dense clips come first, then uniform clips
  auto dm = test_sample(10, 4, 1, 1, 2);
  REQUIRE(dm.size() == 3);
  CHECK(dm[0] == std::vector<int>{3, 4, 5, 6});
  CHECK(dm[1] == std::vector<int>{0, 2, 5, 7});
  CHECK(dm[2] == std::vector<int>{1, 3, 6, 8});
}

TEST_CASE("test sampling is a pure function") {
  auto a = test_sample(25, 8, 2, 2, 2);
  auto b = test_sample(25, 8, 2, 2, 2);
  CHECK(a == b);
}

TEST_CASE("sampled indices respect range, length and ordering") {
  Rng rng(31);
  for (int rep = 0; rep < 500; ++rep) {
    int n_in = static_cast<int>(rng.uniform_int(2, 8));
    int t_total = n_in + static_cast<int>(rng.uniform_int(0, 20));
    int tau_max = (t_total - 1) / (n_in - 1);
    int tau = static_cast<int>(rng.uniform_int(1, std::max(1, tau_max)));
    if (tau * (n_in - 1) >= t_total) tau = 1;

    auto check_clip = [&](const std::vector<int>& idx) {
      REQUIRE(static_cast<int>(idx.size()) == n_in);
      for (size_t i = 0; i < idx.size(); ++i) {
        CHECK(idx[i] >= 0);
        CHECK(idx[i] < t_total);
        if (i > 0) CHECK(idx[i] >= idx[i - 1]);
      }
    };
    check_clip(mixed_train_sample(t_total, n_in, tau, rng));
    for (const auto& clip : test_sample(t_total, n_in, tau, 2, 2)) check_clip(clip);
  }
}

TEST_CASE("alignment offset: equal ranges force xi = 0") {
  Rng rng(37);
  std::vector<int> base = {0, 2, 4};
  for (int rep = 0; rep < 20; ++rep)
    CHECK(align_modalities(base, 5, 5, rng) == base);
}

TEST_CASE("alignment offset support and bounds") {
  Rng rng(41);
  std::vector<int> base;
  for (int i = 0; i < 15; ++i) base.push_back(i);  // max index 14
  std::vector<int> seen(6, 0);
  for (int rep = 0; rep < 10000; ++rep) {
    auto shifted = align_modalities(base, 15, 20, rng);
    int xi = shifted[0] - base[0];
    REQUIRE(xi >= 0);
    REQUIRE(xi <= 5);
    CHECK(shifted.back() <= 19);
    for (size_t i = 0; i < base.size(); ++i) CHECK(shifted[i] - base[i] == xi);
    ++seen[static_cast<size_t>(xi)];
  }
  // every offset in {0..5} appears, uniformly (chi-squared at p > 0.01)
  double stat = oracles::chi2_statistic(seen, 10000 / 6.0);
  CHECK(stat < oracles::chi2_crit_99(5));
}

TEST_CASE("sampling spec invariants are validated") {
  SamplingSpec s;
  s.n_in = 8;
  s.tau = 2;
  CHECK_THROWS_AS(s.validate(14), std::invalid_argument);  // tau*(n-1)=14 >= 14
  CHECK_NOTHROW(s.validate(15));
  s.n_in = 1;
  CHECK_THROWS_AS(s.validate(20), std::invalid_argument);
  s.n_in = 4;
  s.test_k = 0;
  s.test_m = 0;
  CHECK_THROWS_AS(s.validate(20), std::invalid_argument);
}
