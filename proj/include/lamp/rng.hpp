// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lamp::util {

// splitmix64. Small, fast, and identical on every platform, which keeps
// seeded runs byte-reproducible without depending on libstdc++ distribution
// internals.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n = 0 returns 0.
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

  bool chance(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; u1 is kept strictly positive.
  double normal() {
    double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  uint64_t state_;
};

// Independent stream for (seed, index); sampling loops use one stream per
// sample index so results do not depend on worker count or iteration order.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  SplitMix64 mix(seed ^ (0x9e3779b97f4a7c15ull * (index + 1)));
  return mix.next();
}

// Uniform point on the unit sphere in `dim` dimensions.
inline std::vector<double> unit_sphere_point(size_t dim, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> x(dim);
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (size_t i = 0; i < dim; ++i) {
      x[i] = rng.normal();
      norm_sq += x[i] * x[i];
    }
  } while (norm_sq == 0.0);
  double inv = 1.0 / std::sqrt(norm_sq);
  for (double& v : x) v *= inv;
  return x;
}

}  // namespace lamp::util
