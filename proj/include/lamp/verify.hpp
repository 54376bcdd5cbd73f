// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lamp/model.hpp"

namespace lamp::verify {

struct SuiteResult {
  std::string suite;
  bool passed = true;
  uint64_t trials = 0;
  std::string detail;  // summary stats, or the first counterexample
};

// Randomized property suites. Every suite is deterministic in (trials, seed).
SuiteResult run_monotonicity(uint64_t trials, uint64_t seed);
SuiteResult run_greedy_equivalence(uint64_t trials, uint64_t seed,
                                   uint64_t max_weights = 2000);
SuiteResult run_frobenius_oracle(uint64_t trials, uint64_t seed);
SuiteResult run_peeling_bound(uint64_t trials, uint64_t seed, uint64_t samples = 1000);
SuiteResult run_erk_reduction(uint64_t trials, uint64_t seed);

// Dispatch by suite name; nullopt for an unknown name. `trials` = 0 picks a
// per-suite default.
std::optional<SuiteResult> run_suite(const std::string& name, uint64_t trials,
                                     uint64_t seed, uint64_t samples);

std::vector<std::string> suite_names();

// Test-data builders shared with the acceptance suite. Weight values include
// zeros, subnormals, and duplicated magnitudes (within and across layers).
std::vector<float> random_weights(uint64_t n, uint64_t seed, double tie_rate = 0.15);
ModelBundle random_fc_bundle(uint64_t layer_count, uint64_t max_layer_size, uint64_t seed,
                             double tie_rate = 0.15);

}  // namespace lamp::verify
