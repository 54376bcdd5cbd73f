// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lamp/model.hpp"

namespace lamp {

// Dense row-major f64 matrix; small sizes only, this is lab machinery.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(size_t r, size_t c) { return data[r * cols + c]; }
  double at(size_t r, size_t c) const { return data[r * cols + c]; }
  size_t size() const { return data.size(); }
};

// ReLU feedforward net built from the fully-connected layers of a bundle.
// Consecutive shapes must compose (in_i == out_{i-1}).
struct DenseNet {
  std::vector<Matrix> layers;

  static DenseNet from_bundle(const ModelBundle& bundle);

  size_t input_dim() const { return layers.front().cols; }
  size_t depth() const { return layers.size(); }
};

// Alternating matrix multiply and elementwise max(., 0); the final layer has
// no activation.
std::vector<double> forward(const DenseNet& net, std::span<const double> x);

double frobenius_norm(const Matrix& m);

struct SpectralEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Power iteration on A^T A (or A A^T, whichever is smaller) from a
// deterministic start vector, with one restart from a second start.
SpectralEstimate spectral_norm_estimate(const Matrix& m, double rel_tol = 1e-8);

// Throws NoConvergence (message carries the best estimate) when both starts
// stall inside the iteration budget of 10 * max(rows, cols).
double spectral_norm(const Matrix& m, double rel_tol = 1e-8);

struct FrobeniusOptimality {
  double mp_distortion = 0.0;
  double oracle_distortion = 0.0;
  double mp_squared = 0.0;      // canonical rank-order sums; exact comparison
  double oracle_squared = 0.0;  // happens on these
};

// Brute force over every mask with exactly kappa surviving entries, checking
// that magnitude pruning attains the minimum Frobenius distortion. Matrices
// with more than 20 entries throw TooLarge.
FrobeniusOptimality mp_frobenius_optimality_check(const Matrix& m, uint64_t kappa);

struct DistortionReport {
  size_t layer_index = 0;
  uint64_t samples = 0;
  uint64_t seed = 0;
  // Max over the sampled unit inputs (canonical basis vectors plus points on
  // the unit sphere); a lower bound on the true worst case.
  double empirical_lower_bound = 0.0;
  double bound_rhs = 0.0;
};

// Prunes layer `layer_index` with the given bits, samples unit inputs, and
// reports the measured output distortion next to the Frobenius product bound.
DistortionReport peeling_bound_check(const DenseNet& net, size_t layer_index,
                                     std::span<const uint8_t> mask_bits,
                                     uint64_t samples, uint64_t seed);

struct Removal {
  uint32_t layer = 0;
  uint64_t index = 0;
  double damage = 0.0;
};

struct RemovalTrace {
  std::vector<Removal> removals;
};

// Reference procedure: remove one connection at a time, rescoring every
// surviving weight's damage W[u]^2 / sum of surviving W^2 in its layer after
// each removal. Damage ties remove the later layer first, then the smaller
// flat index. Meant for small bundles (<= ~1e4 weights); each step rescores
// from scratch.
RemovalTrace greedy_removal_oracle(const ModelBundle& bundle, uint64_t remove_count);

struct EquivalenceResult {
  bool equal = true;
  size_t first_divergence = 0;
  std::string detail;
};

// Compares the oracle's removal order against the ascending order of
// precomputed LAMP scores under the shared tie rule.
EquivalenceResult lamp_greedy_equivalence_check(const ModelBundle& bundle,
                                                uint64_t remove_count);

std::string to_json(const DistortionReport& report);
std::string to_json(const RemovalTrace& trace);

}  // namespace lamp
