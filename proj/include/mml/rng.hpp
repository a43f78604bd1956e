#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mml {

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact across
// platforms by the standard); the distributions are our own, because the
// std:: distribution algorithms are implementation-defined and would break
// byte-identical dataset / checkpoint reproduction.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform_real() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  bool coin() { return (next_u64() & 1u) != 0; }

  // Box-Muller, caches the second draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform_real();
    double u2 = uniform_real();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix_seed(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream));
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

}  // namespace mml
