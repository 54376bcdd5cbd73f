// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/allocation.hpp"

#include <cmath>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "lamp/errors.hpp"
#include "lamp/rng.hpp"
#include "lamp/scoring.hpp"
#include "lamp/verify.hpp"

using namespace lamp;

namespace {

ModelBundle two_layer_toy() {
  return testing::fc_bundle({{1, 2, 3}, {10, 20, 30}});
}

std::vector<uint64_t> kept_counts(const AllocationResult& result) {
  std::vector<uint64_t> kept;
  for (const auto& l : result.allocation.layers) kept.push_back(l.kept);
  return kept;
}

// Per-layer magnitude pruning at given counts: keep the suffix of the layer's
// sorted index map. Reference for the equivalence property.
MaskBundle layerwise_mp_mask(const ModelBundle& bundle, const std::vector<uint64_t>& kept) {
  MaskBundle mask = MaskBundle::all_ones(bundle);
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (!bundle.layers[i].prunable) continue;
    SortedIndexMap map = sort_indices(bundle.weights[i]);
    std::fill(mask.layers[i].bits.begin(), mask.layers[i].bits.end(), uint8_t{0});
    for (size_t r = map.order.size() - static_cast<size_t>(kept[i]); r < map.order.size();
         ++r) {
      mask.layers[i].bits[map.order[r]] = 1;
    }
  }
  return mask;
}

}  // namespace

TEST_CASE("budget rounds half away from zero") {
  CHECK(SparsityBudget::from_survival(0.5, 6).kappa == 3);
  CHECK(SparsityBudget::from_survival(0.5, 5).kappa == 3);
  CHECK(SparsityBudget::from_survival(1.0, 7).kappa == 7);
  CHECK_THROWS_AS(SparsityBudget::from_survival(0.0, 10), InfeasibleBudget);
  CHECK_THROWS_AS(SparsityBudget::from_survival(1.5, 10), InfeasibleBudget);
  CHECK_THROWS_AS(SparsityBudget::from_survival(1e-9, 10), InfeasibleBudget);
  CHECK_THROWS_AS(SparsityBudget::from_kappa(0, 10), InfeasibleBudget);
  CHECK_THROWS_AS(SparsityBudget::from_kappa(11, 10), InfeasibleBudget);
}

TEST_CASE("lamp allocation splits the toy budget across layers") {
  ModelBundle bundle = two_layer_toy();
  AllocationResult r4 = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(4, 6));
  CHECK(kept_counts(r4) == std::vector<uint64_t>{2, 2});

  // kappa = 3: both score-1.0 weights survive and the 4/13 tie at the cut
  // goes to the earlier layer.
  AllocationResult r3 = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(3, 6));
  CHECK(kept_counts(r3) == std::vector<uint64_t>{2, 1});

  AllocationResult all = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(6, 6));
  CHECK(all.mask.bit_equal(MaskBundle::all_ones(bundle)));

  // kappa = d keeps exactly the per-layer maxima.
  AllocationResult r2 = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(2, 6));
  CHECK(kept_counts(r2) == std::vector<uint64_t>{1, 1});
  CHECK(r2.mask.layers[0].bits == std::vector<uint8_t>{0, 0, 1});
  CHECK(r2.mask.layers[1].bits == std::vector<uint8_t>{0, 0, 1});
}

TEST_CASE("global magnitude pruning may zero out a layer") {
  ModelBundle bundle = two_layer_toy();
  AllocationResult r = allocate_global_mp(bundle, nullptr, SparsityBudget::from_kappa(3, 6));
  CHECK(kept_counts(r) == std::vector<uint64_t>{0, 3});

  AllocationResult one = allocate_global_mp(bundle, nullptr, SparsityBudget::from_kappa(1, 6));
  CHECK(kept_counts(one) == std::vector<uint64_t>{0, 1});
  CHECK(one.mask.layers[1].bits == std::vector<uint8_t>{0, 0, 1});

  AllocationResult all = allocate_global_mp(bundle, nullptr, SparsityBudget::from_kappa(6, 6));
  CHECK(all.mask.bit_equal(MaskBundle::all_ones(bundle)));
}

TEST_CASE("infeasible budgets are rejected") {
  ModelBundle bundle = two_layer_toy();
  MaskBundle half = testing::mask_from_bits(bundle, {{0, 1, 1}, {0, 0, 1}});
  CHECK_THROWS_AS(allocate_lamp(bundle, &half, SparsityBudget::from_kappa(4, 6)),
                  InfeasibleBudget);
}

TEST_CASE("a layer surviving only zeros is degenerate for lamp") {
  ModelBundle bundle = testing::fc_bundle({{0.0f, 1.0f}, {2.0f, 3.0f}});
  MaskBundle mask = testing::mask_from_bits(bundle, {{1, 0}, {1, 1}});
  CHECK_THROWS_AS(allocate_lamp(bundle, &mask, SparsityBudget::from_kappa(2, 4)),
                  DegenerateLayer);
}

TEST_CASE("uniform allocation splits evenly and reconciles remainders") {
  ModelBundle even = testing::fc_bundle(
      {std::vector<float>(10, 1.0f), std::vector<float>(10, 2.0f)});
  AllocationResult r =
      allocate_uniform(even, nullptr, SparsityBudget::from_survival(0.5, 20));
  CHECK(kept_counts(r) == std::vector<uint64_t>{5, 5});

  ModelBundle uneven = testing::fc_bundle(
      {std::vector<float>(3, 1.0f), std::vector<float>(7, 2.0f)});
  AllocationResult lr = allocate_uniform(uneven, nullptr, SparsityBudget::from_kappa(5, 10));
  CHECK(kept_counts(lr) == std::vector<uint64_t>{2, 3});  // 1.5/3.5 tie: earlier layer

  AllocationResult full =
      allocate_uniform(uneven, nullptr, SparsityBudget::from_survival(1.0, 10));
  CHECK(kept_counts(full) == std::vector<uint64_t>{3, 7});
}

TEST_CASE("uniform+ pins the first conv layer and floors the last fc layer") {
  ModelBundle bundle;
  bundle.layers.push_back(
      testing::layer_spec("conv0", LayerKind::conv2d, {4, 25, 1, 1}, true, 0));
  bundle.layers.push_back(
      testing::layer_spec("fc0", LayerKind::fully_connected, {10, 10}, true, 400));
  bundle.weights.push_back(std::vector<float>(100, 1.0f));
  bundle.weights.push_back(std::vector<float>(100, 2.0f));

  AllocationResult r =
      allocate_uniform_plus(bundle, nullptr, SparsityBudget::from_kappa(120, 200));
  CHECK(kept_counts(r) == std::vector<uint64_t>{100, 20});

  CHECK_THROWS_AS(allocate_uniform_plus(bundle, nullptr, SparsityBudget::from_kappa(110, 200)),
                  InfeasibleBudget);
}

TEST_CASE("uniform+ without conv layers degrades to uniform with the fc floor") {
  ModelBundle bundle = testing::fc_bundle(
      {std::vector<float>(100, 1.0f), std::vector<float>(10, 2.0f)});

  // Slack floor: identical to uniform.
  AllocationResult slack =
      allocate_uniform_plus(bundle, nullptr, SparsityBudget::from_kappa(22, 110));
  AllocationResult uniform =
      allocate_uniform(bundle, nullptr, SparsityBudget::from_kappa(22, 110));
  CHECK(kept_counts(slack) == kept_counts(uniform));

  // Binding floor: the last fc layer keeps ceil(10 / 5) = 2.
  AllocationResult bound =
      allocate_uniform_plus(bundle, nullptr, SparsityBudget::from_kappa(11, 110));
  CHECK(kept_counts(bound) == std::vector<uint64_t>{9, 2});
}

TEST_CASE("erk factors match the exact rationals") {
  CHECK(erk_factor(testing::layer_spec("fc", LayerKind::fully_connected, {3, 4}, true, 0)) ==
        5.0 / 12.0);
  CHECK(erk_factor(testing::layer_spec("conv", LayerKind::conv2d, {8, 4, 3, 3}, true, 0)) ==
        0.9375);
  CHECK_THROWS_AS(
      erk_factor(testing::layer_spec("fc", LayerKind::fully_connected, {1, 1}, true, 0)),
      NonPositiveFactor);
  CHECK_THROWS_AS(
      erk_factor(testing::layer_spec("fc", LayerKind::fully_connected, {2, 2}, true, 0)),
      NonPositiveFactor);
}

TEST_CASE("erk single layer gets the whole budget") {
  ModelBundle bundle;
  bundle.layers.push_back(
      testing::layer_spec("fc0", LayerKind::fully_connected, {3, 4}, true, 0));
  bundle.weights.push_back(std::vector<float>(12, 1.0f));
  AllocationResult r = allocate_erk(bundle, nullptr, SparsityBudget::from_kappa(5, 12));
  CHECK(kept_counts(r) == std::vector<uint64_t>{5});
}

TEST_CASE("erk caps a saturated layer and re-solves") {
  ModelBundle bundle;
  bundle.layers.push_back(
      testing::layer_spec("a", LayerKind::fully_connected, {3, 4}, true, 0));
  bundle.layers.push_back(
      testing::layer_spec("b", LayerKind::fully_connected, {10, 10}, true, 48));
  bundle.weights.push_back(std::vector<float>(12, 1.0f));
  bundle.weights.push_back(std::vector<float>(100, 2.0f));

  // factors: 5/12 and 0.8; mass = 5 + 80 = 85. kappa = 111 pushes layer b
  // past its size, so it caps at 100 and layer a absorbs the remaining 11.
  AllocationResult r = allocate_erk(bundle, nullptr, SparsityBudget::from_kappa(111, 112));
  CHECK(kept_counts(r) == std::vector<uint64_t>{11, 100});
}

TEST_CASE("every scheme hits the budget exactly") {
  for (uint64_t trial = 0; trial < 25; ++trial) {
    util::SplitMix64 rng(3000 + trial);
    ModelBundle bundle;
    uint64_t offset = 0;
    uint64_t depth = 2 + rng.below(4);
    for (uint64_t i = 0; i < depth; ++i) {
      uint64_t out = 2 + rng.below(8);
      uint64_t in = 3 + rng.below(8);
      bundle.layers.push_back(testing::layer_spec(
          "fc" + std::to_string(i), LayerKind::fully_connected, {out, in}, true, offset));
      offset += 4 * out * in;
      std::vector<float> w(out * in);
      util::SplitMix64 wrng(5000 + trial * 97 + i);
      for (float& v : w) v = static_cast<float>(wrng.uniform(-1.0, 1.0));
      bundle.weights.push_back(std::move(w));
    }
    uint64_t total = bundle.total_weights();
    // Keep at least half the weights so uniform+'s constraints stay feasible.
    uint64_t kappa = total / 2 + 1 + rng.below(total - total / 2);
    SparsityBudget budget = SparsityBudget::from_kappa(kappa, total);
    for (Scheme scheme : {Scheme::lamp, Scheme::global_mp, Scheme::uniform,
                          Scheme::uniform_plus, Scheme::erk}) {
      AllocationResult r = allocate(bundle, nullptr, budget, scheme);
      REQUIRE(r.allocation.kept_prunable() == kappa);
      REQUIRE(r.mask.surviving_prunable(bundle) == kappa);
    }
  }
}

TEST_CASE("lamp equals layerwise magnitude pruning at the induced counts") {
  for (uint64_t trial = 0; trial < 60; ++trial) {
    ModelBundle bundle = verify::random_fc_bundle(2 + trial % 4, 60, 7000 + trial,
                                                  /*tie_rate=*/0.3);
    uint64_t total = bundle.total_weights();
    util::SplitMix64 rng(100 + trial);
    uint64_t kappa = 1 + rng.below(total);
    AllocationResult r = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(kappa, total));
    MaskBundle reference = layerwise_mp_mask(bundle, kept_counts(r));
    REQUIRE(r.mask.bit_equal(reference));
  }
}

TEST_CASE("rescaling one layer by a power of two leaves the lamp mask unchanged") {
  ModelBundle bundle = verify::random_fc_bundle(3, 40, 1234);
  uint64_t total = bundle.total_weights();
  SparsityBudget budget = SparsityBudget::from_kappa(total / 2, total);
  AllocationResult before = allocate_lamp(bundle, nullptr, budget);

  for (float& v : bundle.weights[1]) v *= 8.0f;
  AllocationResult after = allocate_lamp(bundle, nullptr, budget);
  CHECK(before.mask.bit_equal(after.mask));
}

TEST_CASE("non-prunable layers stay dense and outside the budget") {
  ModelBundle bundle = testing::fc_bundle({{1, 2, 3}, {4, 5, 6}}, {false, true});
  AllocationResult r = allocate_lamp(bundle, nullptr, SparsityBudget::from_kappa(1, 3));
  CHECK(r.mask.layers[0].bits == std::vector<uint8_t>{1, 1, 1});
  CHECK(kept_counts(r) == std::vector<uint64_t>{3, 1});
  CHECK(r.allocation.kept_prunable() == 1);
}

TEST_CASE("schedules follow the compounding survival curve") {
  Schedule s = make_schedule(6, 0.2);
  REQUIRE(s.rounds.size() == 6);
  CHECK(s.rounds[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(s.rounds[2] == doctest::Approx(0.512).epsilon(1e-12));
  CHECK(s.rounds[5] == doctest::Approx(0.262144).epsilon(1e-12));
  CHECK(make_schedule(0, 0.2).rounds.empty());
  CHECK_THROWS_AS(make_schedule(3, 0.0), BadFraction);
  CHECK_THROWS_AS(make_schedule(3, 1.0), BadFraction);
  CHECK_THROWS_AS(make_schedule(3, -0.2), BadFraction);
}

TEST_CASE("iterative pruning lands within one weight of the curve") {
  ModelBundle bundle = verify::random_fc_bundle(3, 200, 31337, /*tie_rate=*/0.0);
  uint64_t total = bundle.total_weights();
  Schedule schedule = make_schedule(5, 0.2);
  MaskBundle mask = MaskBundle::all_ones(bundle);
  for (size_t t = 0; t < schedule.rounds.size(); ++t) {
    SparsityBudget budget = SparsityBudget::from_survival(schedule.rounds[t], total);
    AllocationResult r = allocate_lamp(bundle, &mask, budget);
    mask = r.mask;
    double target = schedule.rounds[t] * static_cast<double>(total);
    REQUIRE(std::fabs(static_cast<double>(mask.surviving_total()) - target) <= 1.0);
  }
}

TEST_CASE("iterative lamp rescores survivors rather than reusing round-0 scores") {
  // After masking 3 away, the denominators renormalize: scores of [1, 2]
  // restricted to survivors equal those of a fresh [1, 2] layer.
  ModelBundle bundle = testing::fc_bundle({{1, 2, 3}});
  MaskBundle mask = testing::mask_from_bits(bundle, {{1, 1, 0}});
  ScoreTensor masked = lamp_scores(bundle.weights[0], mask.layers[0].bits);
  CHECK(masked.values[0] == 1.0 / 5.0);
  CHECK(masked.values[1] == 1.0);
}

TEST_CASE("survival report rates and totals") {
  ModelBundle bundle = two_layer_toy();
  AllocationResult r = allocate_global_mp(bundle, nullptr, SparsityBudget::from_kappa(3, 6));
  SurvivalReport report = survival_report(bundle, r.mask);
  REQUIRE(report.layers.size() == 2);
  CHECK(report.layers[0].rate == 0.0);
  CHECK(report.layers[1].rate == 1.0);
  CHECK(report.total_kept == 3);
  CHECK(report.total_count == 6);

  SurvivalReport dense = survival_report(bundle, MaskBundle::all_ones(bundle));
  for (const auto& l : dense.layers) CHECK(l.rate == 1.0);

  MaskBundle wrong = MaskBundle::all_ones(bundle);
  wrong.layers.pop_back();
  CHECK_THROWS_AS(survival_report(bundle, wrong), MetadataMismatch);
}

TEST_CASE("report renderings carry the scheme, budget, and totals") {
  ModelBundle bundle = two_layer_toy();
  AllocationResult r = allocate_lamp(bundle, nullptr, SparsityBudget::from_survival(0.5, 6));
  SurvivalReport surv = survival_report(bundle, r.mask);
  std::string json = report_json(r.allocation, surv);
  CHECK(json.find("\"scheme\": \"lamp\"") != std::string::npos);
  CHECK(json.find("\"kappa\": 3") != std::string::npos);
  std::string tsv = report_tsv(r.allocation, surv);
  CHECK(tsv.find("layer\tcount\tkept\trate") != std::string::npos);
  CHECK(tsv.find("TOTAL[lamp]\t6\t3\t") != std::string::npos);
}
