#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace silot {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random stream. Uniform doubles are produced directly from
// the raw 64-bit output so results do not depend on libstdc++ distribution
// internals; the same seed gives the same sequence everywhere.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }

  // Box-Muller; consumes exactly two uniforms per sample.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Standard logistic via inverse CDF.
  double logistic() {
    double u = uniform();
    if (u < 1e-12) u = 1e-12;
    if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
    return std::log(u / (1.0 - u));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; derivation is stateless so children do not
  // depend on how much of the parent sequence has been consumed.
  RandomStream child(uint64_t tag) const {
    return RandomStream(splitmix64(seed_ ^ splitmix64(tag ^ 0x6d6f74616e676fULL)));
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace silot
