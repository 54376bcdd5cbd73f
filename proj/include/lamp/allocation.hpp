// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lamp/model.hpp"

namespace lamp {

enum class Scheme { lamp, global_mp, uniform, uniform_plus, erk };

const char* scheme_name(Scheme scheme);
std::optional<Scheme> parse_scheme(const std::string& name);

// Global surviving-weight budget over the prunable layers. kappa is the
// target surviving count; from_survival rounds half away from zero.
struct SparsityBudget {
  double global_survival = 1.0;  // echo of the requested rate
  uint64_t kappa = 0;

  static SparsityBudget from_survival(double survival, uint64_t total_prunable);
  static SparsityBudget from_kappa(uint64_t kappa, uint64_t total_prunable);
};

struct LayerAllocation {
  std::string name;
  uint64_t count = 0;
  uint64_t kept = 0;
  bool prunable = true;
};

// Per-layer surviving counts. kept sums to kappa over the prunable layers;
// non-prunable layers always keep everything and sit outside the budget.
struct Allocation {
  Scheme scheme = Scheme::lamp;
  double global_survival = 1.0;
  uint64_t kappa = 0;
  std::vector<LayerAllocation> layers;

  uint64_t kept_prunable() const;
  uint64_t total_prunable() const;
};

struct AllocationResult {
  Allocation allocation;
  MaskBundle mask;
};

// Turns the budget into a mask under the given scheme. mask_in restricts
// selection to currently surviving weights (pass nullptr for a dense start);
// scores and magnitudes are always computed on the surviving set.
AllocationResult allocate(const ModelBundle& bundle, const MaskBundle* mask_in,
                          const SparsityBudget& budget, Scheme scheme);

AllocationResult allocate_lamp(const ModelBundle& bundle, const MaskBundle* mask_in,
                               const SparsityBudget& budget);
AllocationResult allocate_global_mp(const ModelBundle& bundle, const MaskBundle* mask_in,
                                    const SparsityBudget& budget);
AllocationResult allocate_uniform(const ModelBundle& bundle, const MaskBundle* mask_in,
                                  const SparsityBudget& budget);
AllocationResult allocate_uniform_plus(const ModelBundle& bundle, const MaskBundle* mask_in,
                                       const SparsityBudget& budget);
AllocationResult allocate_erk(const ModelBundle& bundle, const MaskBundle* mask_in,
                              const SparsityBudget& budget);

// Erdos-Renyi kernel density factor,
// 1 - (n_in + n_out + w + h) / (n_in * n_out * w * h), with w = h dropped for
// fully-connected layers so the plain Erdos-Renyi form is recovered. The
// value is a single division of exact integer numerator/denominator.
// Throws NonPositiveFactor when the factor is <= 0.
double erk_factor(const LayerSpec& layer);

// Iterative pruning schedule: after round t the surviving fraction is
// (1 - prune_fraction)^t of the original.
struct Schedule {
  double prune_fraction = 0.2;
  std::vector<double> rounds;  // target global survival per round, t = 1..T
};

Schedule make_schedule(uint64_t rounds, double prune_fraction = 0.2);

struct LayerSurvival {
  std::string name;
  uint64_t count = 0;
  uint64_t kept = 0;
  double rate = 1.0;
};

// Per-layer survival rates plus totals over the prunable layers.
struct SurvivalReport {
  std::vector<LayerSurvival> layers;
  uint64_t total_count = 0;  // prunable weights
  uint64_t total_kept = 0;
  double total_rate = 1.0;
};

SurvivalReport survival_report(const ModelBundle& bundle, const MaskBundle& mask);

// CLI-facing report renderings.
std::string report_json(const Allocation& allocation, const SurvivalReport& survival);
std::string report_tsv(const Allocation& allocation, const SurvivalReport& survival);

}  // namespace lamp
