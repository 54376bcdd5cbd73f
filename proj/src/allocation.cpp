// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lamp/errors.hpp"
#include "lamp/parallel.hpp"
#include "lamp/scoring.hpp"

namespace lamp {
namespace {

struct Candidate {
  double score;
  uint32_t layer;
  uint64_t index;
};

// Keep-priority for merged LAMP scores: higher score first, earlier layer at
// a cross-layer tie, and the later flat index within a layer. The last part
// makes the kept set of each layer a suffix of its sorted index map, which is
// what keeps global LAMP selection equal to per-layer magnitude pruning at
// the induced counts even when a layer holds several zero weights.
bool lamp_keep_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index > b.index;
}

// Merged magnitude ties for global MP: earlier layer, then smaller index.
bool global_keep_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

std::vector<uint8_t> empty_bits(uint64_t count) {
  return std::vector<uint8_t>(count, 0);
}

const std::vector<uint8_t>* layer_survivors(const MaskBundle* mask_in, size_t i) {
  return mask_in ? &mask_in->layers[i].bits : nullptr;
}

uint64_t survivor_count(const ModelBundle& bundle, const MaskBundle* mask_in, size_t i) {
  if (!mask_in) return bundle.layers[i].count;
  return mask_in->surviving(i);
}

uint64_t total_prunable_survivors(const ModelBundle& bundle, const MaskBundle* mask_in) {
  uint64_t total = 0;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (bundle.layers[i].prunable) total += survivor_count(bundle, mask_in, i);
  }
  return total;
}

void require_feasible(uint64_t kappa, uint64_t survivors) {
  if (kappa > survivors) {
    throw InfeasibleBudget("budget " + std::to_string(kappa) + " exceeds the " +
                           std::to_string(survivors) + " surviving prunable weights");
  }
}

// Starts from all-ones and clears the prunable layers; selected survivors are
// set afterwards. Non-prunable layers stay dense.
MaskBundle blank_mask(const ModelBundle& bundle) {
  MaskBundle mask = MaskBundle::all_ones(bundle);
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (bundle.layers[i].prunable) mask.layers[i].bits = empty_bits(bundle.layers[i].count);
  }
  return mask;
}

Allocation finish_allocation(const ModelBundle& bundle, const MaskBundle& mask,
                             const SparsityBudget& budget, Scheme scheme) {
  Allocation alloc;
  alloc.scheme = scheme;
  alloc.global_survival = budget.global_survival;
  alloc.kappa = budget.kappa;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const LayerSpec& layer = bundle.layers[i];
    alloc.layers.push_back({layer.name, layer.count, mask.surviving(i), layer.prunable});
  }
  return alloc;
}

// Top-k surviving weights of one layer by magnitude, as the suffix of the
// sorted index map restricted to survivors. Among equal magnitudes the later
// flat index is kept, matching the map's tie rule.
void keep_topk_magnitude(const ModelBundle& bundle, const MaskBundle* mask_in,
                         size_t layer_index, uint64_t k, MaskBundle& out) {
  const std::vector<float>& w = bundle.weights[layer_index];
  const std::vector<uint8_t>* surv = layer_survivors(mask_in, layer_index);

  std::vector<uint64_t> idx;
  idx.reserve(w.size());
  for (uint64_t u = 0; u < w.size(); ++u) {
    if (!surv || (*surv)[u]) idx.push_back(u);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](uint64_t a, uint64_t b) {
    return std::fabs(w[a]) < std::fabs(w[b]);
  });

  std::vector<uint8_t>& bits = out.layers[layer_index].bits;
  for (size_t r = idx.size() - static_cast<size_t>(k); r < idx.size(); ++r) {
    bits[idx[r]] = 1;
  }
}

// Scores every prunable layer on its surviving set; layers without survivors
// produce an empty tensor and are skipped by the merge.
std::vector<ScoreTensor> score_layers(const ModelBundle& bundle, const MaskBundle* mask_in,
                                      ScoreKind kind) {
  std::vector<ScoreTensor> scores(bundle.layers.size());
  util::parallel_for(bundle.layers.size(), [&](size_t i) {
    const LayerSpec& layer = bundle.layers[i];
    if (!layer.prunable) return;
    if (survivor_count(bundle, mask_in, i) == 0) return;
    std::span<const uint8_t> surv;
    if (const auto* bits = layer_survivors(mask_in, i)) surv = *bits;
    try {
      scores[i] = kind == ScoreKind::lamp
                      ? lamp_scores(bundle.weights[i], surv, layer.name)
                      : magnitude_scores(bundle.weights[i], surv, layer.name);
    } catch (const AllZero&) {
      throw DegenerateLayer("surviving weights of layer '" + layer.name +
                            "' are all zero");
    }
  });
  return scores;
}

AllocationResult select_global(const ModelBundle& bundle, const MaskBundle* mask_in,
                               const SparsityBudget& budget, Scheme scheme) {
  require_feasible(budget.kappa, total_prunable_survivors(bundle, mask_in));

  ScoreKind kind = scheme == Scheme::lamp ? ScoreKind::lamp : ScoreKind::magnitude_sq;
  std::vector<ScoreTensor> scores = score_layers(bundle, mask_in, kind);

  std::vector<Candidate> pool;
  pool.reserve(total_prunable_survivors(bundle, mask_in));
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (!bundle.layers[i].prunable) continue;
    const ScoreTensor& t = scores[i];
    for (uint64_t u = 0; u < t.values.size(); ++u) {
      if (t.valid[u]) pool.push_back({t.values[u], static_cast<uint32_t>(i), u});
    }
  }

  auto cmp = scheme == Scheme::lamp ? lamp_keep_before : global_keep_before;
  size_t k = static_cast<size_t>(budget.kappa);
  if (k < pool.size()) {
    std::nth_element(pool.begin(), pool.begin() + static_cast<ptrdiff_t>(k), pool.end(), cmp);
    pool.resize(k);
  }

  MaskBundle mask = blank_mask(bundle);
  for (const Candidate& c : pool) mask.layers[c.layer].bits[c.index] = 1;
  return {finish_allocation(bundle, mask, budget, scheme), mask};
}

// Largest-remainder reconciliation with per-layer caps. `target` holds the
// fractional shares; the result sums exactly to `kappa` and respects caps.
// Remainder ties prefer the earlier layer.
std::vector<uint64_t> largest_remainder(const std::vector<double>& target,
                                        const std::vector<uint64_t>& cap,
                                        uint64_t kappa) {
  size_t n = target.size();
  std::vector<uint64_t> kept(n, 0);
  uint64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t base = static_cast<uint64_t>(std::floor(target[i]));
    kept[i] = std::min(base, cap[i]);
    assigned += kept[i];
  }
  if (assigned > kappa) {
    throw InfeasibleBudget("rounded shares exceed the budget");  // unreachable for valid targets
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    double ra = target[a] - std::floor(target[a]);
    double rb = target[b] - std::floor(target[b]);
    return ra > rb;  // stable keeps the earlier layer first on ties
  });

  uint64_t left = kappa - assigned;
  while (left > 0) {
    bool progressed = false;
    for (size_t i : order) {
      if (left == 0) break;
      if (kept[i] < cap[i]) {
        ++kept[i];
        --left;
        progressed = true;
      }
    }
    if (!progressed) {
      throw InfeasibleBudget("caps absorb less than the requested budget");
    }
  }
  return kept;
}

AllocationResult masks_from_counts(const ModelBundle& bundle, const MaskBundle* mask_in,
                                   const SparsityBudget& budget, Scheme scheme,
                                   const std::vector<size_t>& prunable,
                                   const std::vector<uint64_t>& kept) {
  MaskBundle mask = blank_mask(bundle);
  for (size_t j = 0; j < prunable.size(); ++j) {
    keep_topk_magnitude(bundle, mask_in, prunable[j], kept[j], mask);
  }
  return {finish_allocation(bundle, mask, budget, scheme), mask};
}

std::vector<size_t> prunable_indices(const ModelBundle& bundle) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (bundle.layers[i].prunable) idx.push_back(i);
  }
  return idx;
}

}  // namespace

const char* scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::lamp: return "lamp";
    case Scheme::global_mp: return "global";
    case Scheme::uniform: return "uniform";
    case Scheme::uniform_plus: return "uniform+";
    case Scheme::erk: return "erk";
  }
  return "?";
}

std::optional<Scheme> parse_scheme(const std::string& name) {
  if (name == "lamp") return Scheme::lamp;
  if (name == "global" || name == "global_mp") return Scheme::global_mp;
  if (name == "uniform") return Scheme::uniform;
  if (name == "uniform+" || name == "uniform_plus") return Scheme::uniform_plus;
  if (name == "erk") return Scheme::erk;
  return std::nullopt;
}

SparsityBudget SparsityBudget::from_survival(double survival, uint64_t total_prunable) {
  if (!(survival > 0.0) || survival > 1.0) {
    throw InfeasibleBudget("global survival must lie in (0, 1]");
  }
  SparsityBudget budget;
  budget.global_survival = survival;
  long long k = std::llround(survival * static_cast<double>(total_prunable));
  if (k < 1) {
    throw InfeasibleBudget("survival " + std::to_string(survival) +
                           " rounds to zero surviving weights");
  }
  budget.kappa = static_cast<uint64_t>(k);
  if (budget.kappa > total_prunable) budget.kappa = total_prunable;
  return budget;
}

SparsityBudget SparsityBudget::from_kappa(uint64_t kappa, uint64_t total_prunable) {
  if (kappa == 0 || kappa > total_prunable) {
    throw InfeasibleBudget("kappa " + std::to_string(kappa) + " outside (0, " +
                           std::to_string(total_prunable) + "]");
  }
  SparsityBudget budget;
  budget.kappa = kappa;
  budget.global_survival =
      static_cast<double>(kappa) / static_cast<double>(total_prunable);
  return budget;
}

uint64_t Allocation::kept_prunable() const {
  uint64_t total = 0;
  for (const auto& l : layers) {
    if (l.prunable) total += l.kept;
  }
  return total;
}

uint64_t Allocation::total_prunable() const {
  uint64_t total = 0;
  for (const auto& l : layers) {
    if (l.prunable) total += l.count;
  }
  return total;
}

AllocationResult allocate_lamp(const ModelBundle& bundle, const MaskBundle* mask_in,
                               const SparsityBudget& budget) {
  return select_global(bundle, mask_in, budget, Scheme::lamp);
}

AllocationResult allocate_global_mp(const ModelBundle& bundle, const MaskBundle* mask_in,
                                    const SparsityBudget& budget) {
  return select_global(bundle, mask_in, budget, Scheme::global_mp);
}

AllocationResult allocate_uniform(const ModelBundle& bundle, const MaskBundle* mask_in,
                                  const SparsityBudget& budget) {
  require_feasible(budget.kappa, total_prunable_survivors(bundle, mask_in));

  std::vector<size_t> prunable = prunable_indices(bundle);
  double total = 0.0;
  for (size_t i : prunable) total += static_cast<double>(bundle.layers[i].count);

  std::vector<double> target;
  std::vector<uint64_t> cap;
  for (size_t i : prunable) {
    target.push_back(static_cast<double>(budget.kappa) *
                     static_cast<double>(bundle.layers[i].count) / total);
    cap.push_back(survivor_count(bundle, mask_in, i));
  }
  std::vector<uint64_t> kept = largest_remainder(target, cap, budget.kappa);
  return masks_from_counts(bundle, mask_in, budget, Scheme::uniform, prunable, kept);
}

AllocationResult allocate_uniform_plus(const ModelBundle& bundle, const MaskBundle* mask_in,
                                       const SparsityBudget& budget) {
  require_feasible(budget.kappa, total_prunable_survivors(bundle, mask_in));

  std::vector<size_t> prunable = prunable_indices(bundle);

  // First conv2d layer stays dense; the last fully-connected layer keeps at
  // least ceil(count / 5) weights. Each constraint applies only when a layer
  // of its kind exists.
  ptrdiff_t first_conv = -1;
  ptrdiff_t last_fc = -1;
  for (size_t i : prunable) {
    if (bundle.layers[i].kind == LayerKind::conv2d && first_conv < 0) {
      first_conv = static_cast<ptrdiff_t>(i);
    }
    if (bundle.layers[i].kind == LayerKind::fully_connected) {
      last_fc = static_cast<ptrdiff_t>(i);
    }
  }

  uint64_t reserved = 0;
  uint64_t conv_kept = 0;
  if (first_conv >= 0) {
    conv_kept = survivor_count(bundle, mask_in, static_cast<size_t>(first_conv));
    reserved = conv_kept;
    if (reserved > budget.kappa) {
      throw InfeasibleBudget("dense first conv layer alone exceeds the budget");
    }
  }

  std::vector<size_t> pool;
  for (size_t i : prunable) {
    if (static_cast<ptrdiff_t>(i) != first_conv) pool.push_back(i);
  }

  uint64_t fc_floor = 0;
  bool fc_fixed = false;
  if (last_fc >= 0) {
    const LayerSpec& fc = bundle.layers[static_cast<size_t>(last_fc)];
    fc_floor = (fc.count + 4) / 5;  // ceil(0.2 * count), exact in integers
    double pool_total = 0.0;
    for (size_t i : pool) pool_total += static_cast<double>(bundle.layers[i].count);
    double uniform_share = static_cast<double>(budget.kappa - reserved) *
                           static_cast<double>(fc.count) / pool_total;
    if (uniform_share < static_cast<double>(fc_floor)) {
      if (fc_floor > survivor_count(bundle, mask_in, static_cast<size_t>(last_fc))) {
        throw InfeasibleBudget("last fully-connected layer has fewer survivors than its floor");
      }
      if (reserved + fc_floor > budget.kappa) {
        throw InfeasibleBudget("constraints alone exceed the budget");
      }
      fc_fixed = true;
      reserved += fc_floor;
      pool.erase(std::find(pool.begin(), pool.end(), static_cast<size_t>(last_fc)));
    }
  }

  double pool_total = 0.0;
  for (size_t i : pool) pool_total += static_cast<double>(bundle.layers[i].count);

  std::vector<double> target;
  std::vector<uint64_t> cap;
  for (size_t i : pool) {
    target.push_back(pool_total == 0.0
                         ? 0.0
                         : static_cast<double>(budget.kappa - reserved) *
                               static_cast<double>(bundle.layers[i].count) / pool_total);
    cap.push_back(survivor_count(bundle, mask_in, i));
  }
  if (pool.empty() && budget.kappa != reserved) {
    throw InfeasibleBudget("constraints pin every layer but do not meet the budget");
  }
  std::vector<uint64_t> kept_pool =
      pool.empty() ? std::vector<uint64_t>{}
                   : largest_remainder(target, cap, budget.kappa - reserved);

  std::vector<uint64_t> kept;
  size_t pool_pos = 0;
  for (size_t i : prunable) {
    if (static_cast<ptrdiff_t>(i) == first_conv) {
      kept.push_back(conv_kept);
    } else if (fc_fixed && static_cast<ptrdiff_t>(i) == last_fc) {
      kept.push_back(fc_floor);
    } else {
      kept.push_back(kept_pool[pool_pos++]);
    }
  }
  return masks_from_counts(bundle, mask_in, budget, Scheme::uniform_plus, prunable, kept);
}

double erk_factor(const LayerSpec& layer) {
  int64_t num;
  int64_t den;
  if (layer.kind == LayerKind::fully_connected) {
    int64_t out = static_cast<int64_t>(layer.shape[0]);
    int64_t in = static_cast<int64_t>(layer.shape[1]);
    den = in * out;
    num = den - (in + out);
  } else {
    int64_t out = static_cast<int64_t>(layer.shape[0]);
    int64_t in = static_cast<int64_t>(layer.shape[1]);
    int64_t kh = static_cast<int64_t>(layer.shape[2]);
    int64_t kw = static_cast<int64_t>(layer.shape[3]);
    den = in * out * kw * kh;
    num = den - (in + out + kw + kh);
  }
  if (num <= 0) {
    throw NonPositiveFactor("layer '" + layer.name + "' has non-positive density factor");
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

AllocationResult allocate_erk(const ModelBundle& bundle, const MaskBundle* mask_in,
                              const SparsityBudget& budget) {
  require_feasible(budget.kappa, total_prunable_survivors(bundle, mask_in));

  std::vector<size_t> prunable = prunable_indices(bundle);
  std::vector<double> factor;
  std::vector<uint64_t> cap;
  for (size_t i : prunable) {
    factor.push_back(erk_factor(bundle.layers[i]));
    cap.push_back(survivor_count(bundle, mask_in, i));
  }

  // Solve the global multiplier so the scaled densities meet kappa, capping
  // saturated layers and re-solving over the rest until a fixpoint.
  size_t n = prunable.size();
  std::vector<bool> capped(n, false);
  std::vector<double> target(n, 0.0);
  uint64_t fixed = 0;
  for (;;) {
    double mass = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (!capped[j]) {
        mass += factor[j] * static_cast<double>(bundle.layers[prunable[j]].count);
      }
    }
    double remaining = static_cast<double>(budget.kappa - fixed);
    double alpha = mass > 0.0 ? remaining / mass : 0.0;
    bool changed = false;
    for (size_t j = 0; j < n; ++j) {
      if (capped[j]) continue;
      double t = alpha * factor[j] * static_cast<double>(bundle.layers[prunable[j]].count);
      if (t > static_cast<double>(cap[j])) {
        capped[j] = true;
        target[j] = static_cast<double>(cap[j]);
        fixed += cap[j];
        changed = true;
      } else {
        target[j] = t;
      }
    }
    if (!changed) break;
  }

  std::vector<double> pool_target;
  std::vector<uint64_t> pool_cap;
  std::vector<size_t> pool_pos;
  for (size_t j = 0; j < n; ++j) {
    if (!capped[j]) {
      pool_target.push_back(target[j]);
      pool_cap.push_back(cap[j]);
      pool_pos.push_back(j);
    }
  }
  std::vector<uint64_t> kept(n, 0);
  for (size_t j = 0; j < n; ++j) {
    if (capped[j]) kept[j] = cap[j];
  }
  if (!pool_pos.empty()) {
    std::vector<uint64_t> pool_kept =
        largest_remainder(pool_target, pool_cap, budget.kappa - fixed);
    for (size_t p = 0; p < pool_pos.size(); ++p) kept[pool_pos[p]] = pool_kept[p];
  } else if (fixed != budget.kappa) {
    throw InfeasibleBudget("caps absorb less than the requested budget");
  }

  return masks_from_counts(bundle, mask_in, budget, Scheme::erk, prunable, kept);
}

AllocationResult allocate(const ModelBundle& bundle, const MaskBundle* mask_in,
                          const SparsityBudget& budget, Scheme scheme) {
  if (mask_in) mask_in->validate_against(bundle);
  switch (scheme) {
    case Scheme::lamp: return allocate_lamp(bundle, mask_in, budget);
    case Scheme::global_mp: return allocate_global_mp(bundle, mask_in, budget);
    case Scheme::uniform: return allocate_uniform(bundle, mask_in, budget);
    case Scheme::uniform_plus: return allocate_uniform_plus(bundle, mask_in, budget);
    case Scheme::erk: return allocate_erk(bundle, mask_in, budget);
  }
  throw InfeasibleBudget("unknown scheme");
}

Schedule make_schedule(uint64_t rounds, double prune_fraction) {
  if (!(prune_fraction > 0.0) || !(prune_fraction < 1.0)) {
    throw BadFraction("prune fraction must lie in (0, 1)");
  }
  Schedule schedule;
  schedule.prune_fraction = prune_fraction;
  schedule.rounds.reserve(rounds);
  for (uint64_t t = 1; t <= rounds; ++t) {
    schedule.rounds.push_back(std::pow(1.0 - prune_fraction, static_cast<double>(t)));
  }
  return schedule;
}

SurvivalReport survival_report(const ModelBundle& bundle, const MaskBundle& mask) {
  mask.validate_against(bundle);
  SurvivalReport report;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const LayerSpec& layer = bundle.layers[i];
    uint64_t kept = mask.surviving(i);
    double rate = layer.count == 0
                      ? 1.0
                      : static_cast<double>(kept) / static_cast<double>(layer.count);
    report.layers.push_back({layer.name, layer.count, kept, rate});
    if (layer.prunable) {
      report.total_count += layer.count;
      report.total_kept += kept;
    }
  }
  report.total_rate = report.total_count == 0
                          ? 1.0
                          : static_cast<double>(report.total_kept) /
                                static_cast<double>(report.total_count);
  return report;
}

std::string report_json(const Allocation& allocation, const SurvivalReport& survival) {
  nlohmann::json doc;
  doc["scheme"] = scheme_name(allocation.scheme);
  doc["global_survival"] = allocation.global_survival;
  doc["kappa"] = allocation.kappa;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSurvival& l : survival.layers) {
    nlohmann::json entry;
    entry["name"] = l.name;
    entry["count"] = l.count;
    entry["kept"] = l.kept;
    entry["rate"] = l.rate;
    layers.push_back(std::move(entry));
  }
  doc["layers"] = std::move(layers);
  doc["total"] = {{"count", survival.total_count},
                  {"kept", survival.total_kept},
                  {"rate", survival.total_rate}};
  return doc.dump(2) + "\n";
}

std::string report_tsv(const Allocation& allocation, const SurvivalReport& survival) {
  std::ostringstream out;
  out << "layer\tcount\tkept\trate\n";
  for (const LayerSurvival& l : survival.layers) {
    out << l.name << '\t' << l.count << '\t' << l.kept << '\t' << l.rate << '\n';
  }
  out << "TOTAL[" << scheme_name(allocation.scheme) << "]\t" << survival.total_count
      << '\t' << survival.total_kept << '\t' << survival.total_rate << '\n';
  return out.str();
}

}  // namespace lamp
