// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/distortion.hpp"

#include <cmath>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "lamp/errors.hpp"
#include "lamp/rng.hpp"
#include "lamp/verify.hpp"

using namespace lamp;

namespace {

Matrix matrix_2x2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m.at(0, 0) = a;
  m.at(0, 1) = b;
  m.at(1, 0) = c;
  m.at(1, 1) = d;
  return m;
}

DenseNet identity_net(size_t dim, size_t depth) {
  DenseNet net;
  for (size_t l = 0; l < depth; ++l) {
    Matrix m(dim, dim);
    for (size_t i = 0; i < dim; ++i) m.at(i, i) = 1.0;
    net.layers.push_back(std::move(m));
  }
  return net;
}

DenseNet random_net(uint64_t seed, size_t depth, size_t max_width) {
  util::SplitMix64 rng(seed);
  std::vector<size_t> dims(depth + 1);
  for (size_t& d : dims) d = 1 + rng.below(max_width);
  DenseNet net;
  for (size_t l = 0; l < depth; ++l) {
    Matrix m(dims[l + 1], dims[l]);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    net.layers.push_back(std::move(m));
  }
  return net;
}

}  // namespace

TEST_CASE("forward applies no activation after the last layer") {
  DenseNet net = identity_net(2, 1);
  std::vector<double> y = forward(net, std::vector<double>{1.0, -1.0});
  CHECK(y == std::vector<double>{1.0, -1.0});
}

TEST_CASE("forward clips negatives between layers") {
  DenseNet net = identity_net(2, 2);
  std::vector<double> y = forward(net, std::vector<double>{-1.0, 2.0});
  CHECK(y == std::vector<double>{0.0, 2.0});
}

TEST_CASE("zero input maps to zero output") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    DenseNet net = random_net(200 + seed, 1 + seed % 4, 8);
    std::vector<double> y = forward(net, std::vector<double>(net.input_dim(), 0.0));
    for (double v : y) REQUIRE(v == 0.0);
  }
}

TEST_CASE("forward rejects wrong input dims") {
  DenseNet net = identity_net(2, 1);
  CHECK_THROWS_AS(forward(net, std::vector<double>{1.0}), DimMismatch);
}

TEST_CASE("dense nets reject conv layers and non-composing shapes") {
  ModelBundle conv;
  conv.layers.push_back(testing::layer_spec("c", LayerKind::conv2d, {1, 1, 2, 2}, true, 0));
  conv.weights.push_back(std::vector<float>(4, 1.0f));
  CHECK_THROWS_AS(DenseNet::from_bundle(conv), DimMismatch);

  ModelBundle bad;
  bad.layers.push_back(testing::layer_spec("a", LayerKind::fully_connected, {3, 2}, true, 0));
  bad.layers.push_back(testing::layer_spec("b", LayerKind::fully_connected, {2, 4}, true, 24));
  bad.weights.push_back(std::vector<float>(6, 1.0f));
  bad.weights.push_back(std::vector<float>(8, 1.0f));
  CHECK_THROWS_AS(DenseNet::from_bundle(bad), DimMismatch);
}

TEST_CASE("diagonal matrix norms") {
  Matrix m = matrix_2x2(3.0, 0.0, 0.0, 4.0);
  CHECK(frobenius_norm(m) == 5.0);
  CHECK(spectral_norm(m) == doctest::Approx(4.0).epsilon(1e-7));

  Matrix zero(3, 2);
  CHECK(frobenius_norm(zero) == 0.0);
  CHECK(spectral_norm(zero) == 0.0);
}

TEST_CASE("spectral norm never exceeds the Frobenius norm") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    util::SplitMix64 rng(900 + seed);
    Matrix m(1 + rng.below(12), 1 + rng.below(12));
    for (double& v : m.data) v = rng.uniform(-2.0, 2.0);
    SpectralEstimate est = spectral_norm_estimate(m);
    REQUIRE(est.value <= frobenius_norm(m) + 1e-8);
  }
}

TEST_CASE("relu is 1-Lipschitz on random pairs") {
  util::SplitMix64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    size_t n = 1 + rng.below(16);
    double da = 0.0;
    double dr = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double a = rng.uniform(-3.0, 3.0);
      double b = rng.uniform(-3.0, 3.0);
      double ra = a > 0.0 ? a : 0.0;
      double rb = b > 0.0 ? b : 0.0;
      da += (a - b) * (a - b);
      dr += (ra - rb) * (ra - rb);
    }
    REQUIRE(std::sqrt(dr) <= std::sqrt(da) + 1e-12);
  }
}

TEST_CASE("magnitude pruning attains the brute-force Frobenius minimum") {
  Matrix m = matrix_2x2(1.0, 2.0, 3.0, 4.0);
  FrobeniusOptimality check = mp_frobenius_optimality_check(m, 2);
  CHECK(check.mp_squared == 5.0);  // prunes 1 and 2
  CHECK(check.oracle_squared == 5.0);
  CHECK(check.mp_distortion == doctest::Approx(std::sqrt(5.0)));

  CHECK(mp_frobenius_optimality_check(m, 4).oracle_squared == 0.0);
  CHECK(mp_frobenius_optimality_check(m, 0).oracle_squared == 30.0);

  Matrix big(3, 7);
  CHECK_THROWS_AS(mp_frobenius_optimality_check(big, 1), TooLarge);
}

TEST_CASE("brute-force optimality holds on random matrices including ties") {
  for (uint64_t trial = 0; trial < 30; ++trial) {
    util::SplitMix64 rng(4000 + trial);
    size_t n = 1 + rng.below(12);
    Matrix m(1, n);
    std::vector<float> vals = verify::random_weights(n, 6000 + trial, /*tie_rate=*/0.35);
    for (size_t u = 0; u < n; ++u) m.data[u] = vals[u];
    for (uint64_t kappa = 0; kappa <= n; ++kappa) {
      FrobeniusOptimality check = mp_frobenius_optimality_check(m, kappa);
      REQUIRE(check.mp_squared == check.oracle_squared);
    }
  }
}

TEST_CASE("peeling bound is tight on the pruned identity") {
  DenseNet net = identity_net(2, 1);
  std::vector<uint8_t> bits{0, 1, 1, 1};  // prune the (0,0) entry
  DistortionReport report = peeling_bound_check(net, 0, bits, 100, 7);
  CHECK(report.bound_rhs == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(report.empirical_lower_bound - report.bound_rhs) <= 1e-9);
}

TEST_CASE("unpruned mask gives zero distortion on both sides") {
  DenseNet net = random_net(77, 2, 6);
  std::vector<uint8_t> bits(net.layers[1].size(), 1);
  DistortionReport report = peeling_bound_check(net, 1, bits, 50, 3);
  CHECK(report.empirical_lower_bound == 0.0);
  CHECK(report.bound_rhs == 0.0);
}

TEST_CASE("peeling bound dominates measured distortion on random nets") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    DenseNet net = random_net(500 + seed, 3, 8);
    util::SplitMix64 rng(seed);
    size_t layer = rng.below(3);
    std::vector<uint8_t> bits(net.layers[layer].size());
    for (auto& b : bits) b = rng.chance(0.5) ? 1 : 0;
    DistortionReport report = peeling_bound_check(net, layer, bits, 200, seed);
    REQUIRE(report.empirical_lower_bound <= report.bound_rhs + 1e-6);
  }
}

TEST_CASE("greedy oracle removes the least damaging connection first") {
  ModelBundle bundle = testing::fc_bundle({{1, 2}, {3}});
  RemovalTrace trace = greedy_removal_oracle(bundle, 1);
  REQUIRE(trace.removals.size() == 1);
  CHECK(trace.removals[0].layer == 0);
  CHECK(trace.removals[0].index == 0);
  CHECK(trace.removals[0].damage == 1.0 / 5.0);

  CHECK(greedy_removal_oracle(bundle, 0).removals.empty());
  CHECK_THROWS_AS(greedy_removal_oracle(bundle, 4), InfeasibleBudget);
}

TEST_CASE("removing all but one weight per layer leaves the per-layer maxima") {
  ModelBundle bundle = testing::fc_bundle({{1, 2}, {3}});
  RemovalTrace trace = greedy_removal_oracle(bundle, 1);  // total - depth
  std::vector<std::vector<uint8_t>> alive{{1, 1}, {1}};
  for (const Removal& r : trace.removals) alive[r.layer][r.index] = 0;
  CHECK(alive[0] == std::vector<uint8_t>{0, 1});
  CHECK(alive[1] == std::vector<uint8_t>{1});
}

TEST_CASE("removals within a layer ascend in magnitude") {
  ModelBundle bundle = verify::random_fc_bundle(3, 30, 92, /*tie_rate=*/0.3);
  RemovalTrace trace = greedy_removal_oracle(bundle, bundle.total_weights());
  std::vector<double> last_mag(3, -1.0);
  for (const Removal& r : trace.removals) {
    double mag = std::fabs(bundle.weights[r.layer][r.index]);
    REQUIRE(mag >= last_mag[r.layer]);
    last_mag[r.layer] = mag;
  }
}

TEST_CASE("greedy order equals the ascending lamp order") {
  for (uint64_t trial = 0; trial < 40; ++trial) {
    ModelBundle bundle =
        verify::random_fc_bundle(1 + trial % 4, 25, 8800 + trial, /*tie_rate=*/0.3);
    uint64_t total = bundle.total_weights();
    EquivalenceResult full = lamp_greedy_equivalence_check(bundle, total);
    REQUIRE_MESSAGE(full.equal, full.detail);
  }
}

TEST_CASE("greedy order handles tied magnitudes within and across layers") {
  ModelBundle within = testing::fc_bundle({{2, 2}});
  CHECK(lamp_greedy_equivalence_check(within, 2).equal);

  ModelBundle across = testing::fc_bundle({{2, 2}, {2, 2}});
  CHECK(lamp_greedy_equivalence_check(across, 4).equal);

  ModelBundle scaled = testing::fc_bundle({{1, 2, 3}, {4, 8, 12}});  // x4 copy
  CHECK(lamp_greedy_equivalence_check(scaled, 6).equal);

  CHECK(lamp_greedy_equivalence_check(within, 0).equal);
}

TEST_CASE("distortion reports serialize with seed and sample count") {
  DenseNet net = identity_net(2, 1);
  std::vector<uint8_t> bits{0, 1, 1, 1};
  DistortionReport report = peeling_bound_check(net, 0, bits, 10, 99);
  std::string json = to_json(report);
  CHECK(json.find("\"seed\": 99") != std::string::npos);
  CHECK(json.find("\"samples\": 10") != std::string::npos);

  RemovalTrace trace = greedy_removal_oracle(testing::fc_bundle({{1, 2}}), 1);
  std::string trace_json = to_json(trace);
  CHECK(trace_json.find("\"damage\"") != std::string::npos);
}
