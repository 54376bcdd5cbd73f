// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lamp/allocation.hpp"
#include "lamp/distortion.hpp"
#include "lamp/errors.hpp"
#include "lamp/rng.hpp"
#include "lamp/scoring.hpp"

namespace lamp::verify {
namespace {

using util::SplitMix64;

float random_value(SplitMix64& rng, std::vector<float>& magnitude_pool, double tie_rate) {
  double r = rng.uniform();
  float v;
  if (r < 0.02) {
    v = 0.0f;
  } else if (r < 0.05) {
    // Subnormal: zero exponent, random mantissa.
    uint32_t mantissa = static_cast<uint32_t>(rng.next() & 0x7fffffu);
    if (mantissa == 0) mantissa = 1;
    uint32_t sign = rng.chance(0.5) ? 0x80000000u : 0u;
    v = std::bit_cast<float>(sign | mantissa);
  } else if (r < 0.05 + tie_rate && !magnitude_pool.empty()) {
    float m = magnitude_pool[rng.below(magnitude_pool.size())];
    v = rng.chance(0.5) ? m : -m;
  } else {
    v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  magnitude_pool.push_back(std::fabs(v));
  return v;
}

void ensure_not_all_zero(std::vector<float>& w, SplitMix64& rng) {
  for (float v : w) {
    if (v != 0.0f) return;
  }
  if (!w.empty()) w[rng.below(w.size())] = static_cast<float>(rng.uniform(0.1, 1.0));
}

std::string counterexample(const std::string& what, uint64_t trial, uint64_t seed) {
  std::ostringstream out;
  out << what << " (trial " << trial << ", seed " << seed << ")";
  return out.str();
}

// Plain Erdos-Renyi allocation for all-fc models, written independently of
// allocate_erk: densities proportional to 1 - (n_in + n_out) / (n_in * n_out),
// capped at the layer size, multiplier re-solved until stable, then
// largest-remainder rounding with the earlier-layer tie rule.
std::vector<uint64_t> plain_er_allocation(const ModelBundle& bundle, uint64_t kappa) {
  size_t d = bundle.layers.size();
  std::vector<double> phi(d);
  for (size_t i = 0; i < d; ++i) {
    double out = static_cast<double>(bundle.layers[i].shape[0]);
    double in = static_cast<double>(bundle.layers[i].shape[1]);
    phi[i] = (in * out - in - out) / (in * out);
  }

  std::vector<bool> saturated(d, false);
  std::vector<double> share(d, 0.0);
  uint64_t pinned = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    double mass = 0.0;
    for (size_t i = 0; i < d; ++i) {
      if (!saturated[i]) mass += phi[i] * static_cast<double>(bundle.layers[i].count);
    }
    double alpha = mass > 0.0 ? static_cast<double>(kappa - pinned) / mass : 0.0;
    for (size_t i = 0; i < d; ++i) {
      if (saturated[i]) continue;
      share[i] = alpha * phi[i] * static_cast<double>(bundle.layers[i].count);
      if (share[i] > static_cast<double>(bundle.layers[i].count)) {
        saturated[i] = true;
        share[i] = static_cast<double>(bundle.layers[i].count);
        pinned += bundle.layers[i].count;
        changed = true;
      }
    }
  }

  std::vector<uint64_t> kept(d, 0);
  uint64_t used = 0;
  for (size_t i = 0; i < d; ++i) {
    kept[i] = saturated[i] ? bundle.layers[i].count
                           : static_cast<uint64_t>(std::floor(share[i]));
    used += kept[i];
  }
  std::vector<size_t> order(d);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    double ra = share[a] - std::floor(share[a]);
    double rb = share[b] - std::floor(share[b]);
    return ra > rb;
  });
  while (used < kappa) {
    bool progressed = false;
    for (size_t i : order) {
      if (used == kappa) break;
      if (kept[i] < bundle.layers[i].count) {
        ++kept[i];
        ++used;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return kept;
}

}  // namespace

std::vector<float> random_weights(uint64_t n, uint64_t seed, double tie_rate) {
  SplitMix64 rng(seed);
  std::vector<float> w;
  w.reserve(n);
  std::vector<float> pool;
  for (uint64_t i = 0; i < n; ++i) w.push_back(random_value(rng, pool, tie_rate));
  ensure_not_all_zero(w, rng);
  return w;
}

ModelBundle random_fc_bundle(uint64_t layer_count, uint64_t max_layer_size, uint64_t seed,
                             double tie_rate) {
  SplitMix64 rng(seed);
  ModelBundle bundle;
  uint64_t offset = 0;
  std::vector<float> pool;  // shared across layers so ties cross layers too
  for (uint64_t i = 0; i < layer_count; ++i) {
    uint64_t n = 1 + rng.below(max_layer_size);
    LayerSpec layer;
    layer.name = "fc" + std::to_string(i);
    layer.kind = LayerKind::fully_connected;
    layer.shape = {n, 1};
    layer.prunable = true;
    layer.offset = offset;
    layer.count = n;
    offset += 4 * n;

    std::vector<float> w;
    w.reserve(n);
    if (i > 0 && rng.chance(0.15)) {
      // Exact duplicate of the previous layer, optionally scaled by a power
      // of two: scores tie bit-for-bit across the two layers.
      const std::vector<float>& prev = bundle.weights.back();
      float scale = rng.chance(0.5) ? 1.0f : 4.0f;
      for (uint64_t u = 0; u < n; ++u) w.push_back(prev[u % prev.size()] * scale);
      layer.count = w.size();
    } else {
      for (uint64_t u = 0; u < n; ++u) w.push_back(random_value(rng, pool, tie_rate));
    }
    ensure_not_all_zero(w, rng);
    layer.shape = {static_cast<uint64_t>(w.size()), 1};
    bundle.layers.push_back(std::move(layer));
    bundle.weights.push_back(std::move(w));
  }
  return bundle;
}

SuiteResult run_monotonicity(uint64_t trials, uint64_t seed) {
  SuiteResult result;
  result.suite = "monotonicity";
  result.trials = trials;

  uint64_t total_weights = 0;
  for (uint64_t t = 0; t < trials; ++t) {
    SplitMix64 rng(util::derive_seed(seed, t));
    // Mostly small layers with an occasional large one; sizes span 1..1e4.
    uint64_t n;
    double pick = rng.uniform();
    if (pick < 0.80) {
      n = 1 + rng.below(64);
    } else if (pick < 0.95) {
      n = 65 + rng.below(960);
    } else {
      n = 1025 + rng.below(8976);
    }
    std::vector<float> w = random_weights(n, util::derive_seed(seed, t ^ 0xabcdefull));
    total_weights += n;

    ScoreTensor scores = lamp_scores(w);
    SortedIndexMap map = sort_indices(w);
    for (size_t r = 0; r + 1 < map.order.size(); ++r) {
      uint64_t lo = map.order[r];
      uint64_t hi = map.order[r + 1];
      double sq_lo = static_cast<double>(w[lo]) * w[lo];
      double sq_hi = static_cast<double>(w[hi]) * w[hi];
      bool ok = sq_hi > sq_lo ? scores.values[hi] > scores.values[lo]
                              : scores.values[hi] >= scores.values[lo];
      if (!ok) {
        result.passed = false;
        result.detail = counterexample(
            "score order violates squared-magnitude order at flat indices " +
                std::to_string(lo) + "," + std::to_string(hi),
            t, seed);
        return result;
      }
    }
    if (scores.values[map.order.back()] != 1.0) {
      result.passed = false;
      result.detail = counterexample("top surviving score is not exactly 1.0", t, seed);
      return result;
    }
  }

  std::ostringstream detail;
  detail << trials << " layers, " << total_weights << " weights, 0 violations";
  result.detail = detail.str();
  return result;
}

SuiteResult run_greedy_equivalence(uint64_t trials, uint64_t seed, uint64_t max_weights) {
  SuiteResult result;
  result.suite = "greedy-equivalence";
  result.trials = trials;

  uint64_t total_removed = 0;
  for (uint64_t t = 0; t < trials; ++t) {
    SplitMix64 rng(util::derive_seed(seed, t));
    uint64_t layers = 1 + rng.below(4);
    uint64_t per_layer = std::max<uint64_t>(2, max_weights / std::max<uint64_t>(layers, 1));
    ModelBundle bundle =
        random_fc_bundle(layers, per_layer, util::derive_seed(seed, t ^ 0x5151ull),
                         /*tie_rate=*/0.25);
    uint64_t total = bundle.total_weights();
    uint64_t remove = rng.chance(0.5) ? total : rng.below(total + 1);
    total_removed += remove;

    EquivalenceResult eq = lamp_greedy_equivalence_check(bundle, remove);
    if (!eq.equal) {
      result.passed = false;
      result.detail = counterexample(eq.detail, t, seed);
      return result;
    }
  }

  std::ostringstream detail;
  detail << trials << " bundles, " << total_removed << " removals, orders identical";
  result.detail = detail.str();
  return result;
}

SuiteResult run_frobenius_oracle(uint64_t trials, uint64_t seed) {
  SuiteResult result;
  result.suite = "frobenius-oracle";
  result.trials = trials;

  uint64_t checks = 0;
  for (uint64_t t = 0; t < trials; ++t) {
    SplitMix64 rng(util::derive_seed(seed, t));
    size_t n = 1 + static_cast<size_t>(rng.below(20));
    size_t rows = 1 + static_cast<size_t>(rng.below(n));
    while (n % rows != 0) --rows;
    size_t cols = n / rows;

    Matrix m(rows, cols);
    std::vector<float> vals =
        random_weights(n, util::derive_seed(seed, t ^ 0xf0f0ull), /*tie_rate=*/0.3);
    for (size_t u = 0; u < n; ++u) m.data[u] = vals[u];

    for (uint64_t kappa = 0; kappa <= n; ++kappa) {
      FrobeniusOptimality check = mp_frobenius_optimality_check(m, kappa);
      ++checks;
      if (check.mp_squared != check.oracle_squared) {
        std::ostringstream what;
        what << "magnitude pruning misses the optimum at kappa " << kappa << " ("
             << check.mp_squared << " vs " << check.oracle_squared << ")";
        result.passed = false;
        result.detail = counterexample(what.str(), t, seed);
        return result;
      }
    }
  }

  std::ostringstream detail;
  detail << trials << " matrices, " << checks << " (matrix, kappa) pairs, exact match";
  result.detail = detail.str();
  return result;
}

SuiteResult run_peeling_bound(uint64_t trials, uint64_t seed, uint64_t samples) {
  SuiteResult result;
  result.suite = "peeling-bound";
  result.trials = trials;

  double max_excess = -1e300;  // empirical minus bound; must stay <= 1e-6
  for (uint64_t t = 0; t < trials; ++t) {
    SplitMix64 rng(util::derive_seed(seed, t));
    size_t depth = 1 + static_cast<size_t>(rng.below(4));
    std::vector<size_t> dims(depth + 1);
    for (size_t& d : dims) d = 1 + static_cast<size_t>(rng.below(16));

    DenseNet net;
    for (size_t i = 0; i < depth; ++i) {
      Matrix m(dims[i + 1], dims[i]);
      for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
      net.layers.push_back(std::move(m));
    }

    size_t layer = static_cast<size_t>(rng.below(depth));
    std::vector<uint8_t> bits(net.layers[layer].size());
    for (auto& b : bits) b = rng.chance(0.5) ? 1 : 0;

    DistortionReport report =
        peeling_bound_check(net, layer, bits, samples, util::derive_seed(seed, t ^ 0x9999ull));
    double excess = report.empirical_lower_bound - report.bound_rhs;
    max_excess = std::max(max_excess, excess);
    if (excess > 1e-6) {
      std::ostringstream what;
      what << "measured distortion " << report.empirical_lower_bound
           << " exceeds the bound " << report.bound_rhs;
      result.passed = false;
      result.detail = counterexample(what.str(), t, seed);
      return result;
    }
  }

  std::ostringstream detail;
  detail << trials << " nets, " << samples << " samples each, max(empirical - bound) = "
         << max_excess;
  result.detail = detail.str();
  return result;
}

SuiteResult run_erk_reduction(uint64_t trials, uint64_t seed) {
  SuiteResult result;
  result.suite = "erk-reduction";
  result.trials = trials;

  for (uint64_t t = 0; t < trials; ++t) {
    SplitMix64 rng(util::derive_seed(seed, t));
    uint64_t depth = 2 + rng.below(5);
    ModelBundle bundle;
    uint64_t offset = 0;
    SplitMix64 wrng(util::derive_seed(seed, t ^ 0x7777ull));
    for (uint64_t i = 0; i < depth; ++i) {
      // (out - 1)(in - 1) > 1 keeps the density factor positive.
      uint64_t out = 2 + rng.below(15);
      uint64_t in = 3 + rng.below(15);
      LayerSpec layer;
      layer.name = "fc" + std::to_string(i);
      layer.kind = LayerKind::fully_connected;
      layer.shape = {out, in};
      layer.prunable = true;
      layer.offset = offset;
      layer.count = out * in;
      offset += 4 * layer.count;
      std::vector<float> w(layer.count);
      for (float& v : w) v = static_cast<float>(wrng.uniform(-1.0, 1.0));
      bundle.layers.push_back(std::move(layer));
      bundle.weights.push_back(std::move(w));
    }

    uint64_t total = bundle.total_weights();
    uint64_t kappa = 1 + rng.below(total);
    AllocationResult got =
        allocate_erk(bundle, nullptr, SparsityBudget::from_kappa(kappa, total));
    std::vector<uint64_t> want = plain_er_allocation(bundle, kappa);

    for (size_t i = 0; i < bundle.layers.size(); ++i) {
      if (got.allocation.layers[i].kept != want[i]) {
        std::ostringstream what;
        what << "layer " << i << " keeps " << got.allocation.layers[i].kept
             << ", plain Erdos-Renyi expects " << want[i] << " (kappa " << kappa << ")";
        result.passed = false;
        result.detail = counterexample(what.str(), t, seed);
        return result;
      }
    }
  }

  std::ostringstream detail;
  detail << trials << " all-fc models, allocations identical";
  result.detail = detail.str();
  return result;
}

std::optional<SuiteResult> run_suite(const std::string& name, uint64_t trials,
                                     uint64_t seed, uint64_t samples) {
  if (name == "monotonicity") {
    return run_monotonicity(trials ? trials : 1000, seed);
  }
  if (name == "greedy-equivalence") {
    return run_greedy_equivalence(trials ? trials : 100, seed, /*max_weights=*/500);
  }
  if (name == "frobenius-oracle") {
    return run_frobenius_oracle(trials ? trials : 50, seed);
  }
  if (name == "peeling-bound") {
    return run_peeling_bound(trials ? trials : 50, seed, samples ? samples : 1000);
  }
  if (name == "erk-reduction") {
    return run_erk_reduction(trials ? trials : 200, seed);
  }
  return std::nullopt;
}

std::vector<std::string> suite_names() {
  return {"monotonicity", "greedy-equivalence", "frobenius-oracle", "peeling-bound",
          "erk-reduction"};
}

}  // namespace lamp::verify
