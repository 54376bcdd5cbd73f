// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lamp/errors.hpp"
#include "lamp/parallel.hpp"
#include "lamp/rng.hpp"
#include "lamp/scoring.hpp"

namespace lamp {
namespace {

inline double squared(float w) {
  double d = w;
  return d * d;
}

std::vector<double> mat_vec(const Matrix& m, std::span<const double> x) {
  std::vector<double> y(m.rows, 0.0);
  for (size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

std::vector<double> mat_t_vec(const Matrix& m, std::span<const double> y) {
  std::vector<double> x(m.cols, 0.0);
  for (size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    for (size_t c = 0; c < m.cols; ++c) x[c] += row[c] * y[r];
  }
  return x;
}

double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

SpectralEstimate power_iteration(const Matrix& m, double rel_tol, uint64_t start_seed) {
  // Iterate on the smaller Gram operator; both share the top eigenvalue.
  bool tall = m.rows >= m.cols;
  size_t dim = tall ? m.cols : m.rows;
  int max_iters = 10 * static_cast<int>(std::max(m.rows, m.cols));

  std::vector<double> v = util::unit_sphere_point(dim, start_seed);
  SpectralEstimate est;
  double lambda_prev = -1.0;
  for (int it = 1; it <= max_iters; ++it) {
    std::vector<double> w;
    if (tall) {
      w = mat_t_vec(m, mat_vec(m, v));
    } else {
      w = mat_vec(m, mat_t_vec(m, v));
    }
    double lambda = 0.0;
    for (size_t i = 0; i < dim; ++i) lambda += v[i] * w[i];
    double wn = norm2(w);
    est.value = std::sqrt(std::max(lambda, 0.0));
    est.iterations = it;
    if (wn == 0.0) {
      // v lies in the null space; for the zero matrix this is the answer.
      est.converged = true;
      return est;
    }
    if (lambda_prev >= 0.0 &&
        std::fabs(lambda - lambda_prev) <= rel_tol * std::max(lambda, 1e-300)) {
      est.converged = true;
      return est;
    }
    lambda_prev = lambda;
    for (size_t i = 0; i < dim; ++i) v[i] = w[i] / wn;
  }
  return est;
}

// Canonical squared Frobenius distortion of a pruned index set: squares are
// added in ascending (value, index) rank order so that equal multisets of
// pruned squares produce bit-identical sums.
double pruned_sum_by_rank(const std::vector<double>& sq_by_rank, uint32_t kept_mask) {
  double acc = 0.0;
  for (size_t rank = 0; rank < sq_by_rank.size(); ++rank) {
    if ((kept_mask & (1u << rank)) == 0) acc += sq_by_rank[rank];
  }
  return acc;
}

}  // namespace

DenseNet DenseNet::from_bundle(const ModelBundle& bundle) {
  DenseNet net;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const LayerSpec& layer = bundle.layers[i];
    if (layer.kind != LayerKind::fully_connected) {
      throw DimMismatch("layer '" + layer.name + "' is not fully connected");
    }
    Matrix m(layer.shape[0], layer.shape[1]);
    for (size_t u = 0; u < m.size(); ++u) m.data[u] = bundle.weights[i][u];
    if (!net.layers.empty() && net.layers.back().rows != m.cols) {
      throw DimMismatch("layer '" + layer.name + "' input dim " +
                        std::to_string(m.cols) + " does not match previous output " +
                        std::to_string(net.layers.back().rows));
    }
    net.layers.push_back(std::move(m));
  }
  if (net.layers.empty()) throw DimMismatch("bundle has no layers");
  return net;
}

std::vector<double> forward(const DenseNet& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw DimMismatch("input dim " + std::to_string(x.size()) + " != " +
                      std::to_string(net.input_dim()));
  }
  std::vector<double> h(x.begin(), x.end());
  for (size_t i = 0; i < net.layers.size(); ++i) {
    h = mat_vec(net.layers[i], h);
    if (i + 1 < net.layers.size()) {
      for (double& v : h) v = v > 0.0 ? v : 0.0;
    }
  }
  return h;
}

double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data) acc += v * v;
  return std::sqrt(acc);
}

SpectralEstimate spectral_norm_estimate(const Matrix& m, double rel_tol) {
  SpectralEstimate est = power_iteration(m, rel_tol, 0x1a2b3c4d5e6f7081ull);
  if (est.converged) return est;
  SpectralEstimate retry = power_iteration(m, rel_tol, 0x9f8e7d6c5b4a3920ull);
  return retry.converged || retry.value > est.value ? retry : est;
}

double spectral_norm(const Matrix& m, double rel_tol) {
  SpectralEstimate est = spectral_norm_estimate(m, rel_tol);
  if (!est.converged) {
    std::ostringstream msg;
    msg << "power iteration stalled after " << est.iterations
        << " iterations; best estimate " << est.value;
    throw NoConvergence(msg.str());
  }
  return est.value;
}

FrobeniusOptimality mp_frobenius_optimality_check(const Matrix& m, uint64_t kappa) {
  size_t n = m.size();
  if (n > 20) throw TooLarge("brute-force oracle is limited to 20 entries");
  if (kappa > n) throw TooLarge("kappa exceeds the entry count");

  // Rank entries by (squared value, index). MP keeps the top-kappa ranks.
  std::vector<size_t> rank_to_index(n);
  std::iota(rank_to_index.begin(), rank_to_index.end(), size_t{0});
  std::stable_sort(rank_to_index.begin(), rank_to_index.end(), [&](size_t a, size_t b) {
    return m.data[a] * m.data[a] < m.data[b] * m.data[b];
  });
  std::vector<double> sq_by_rank(n);
  for (size_t r = 0; r < n; ++r) {
    double v = m.data[rank_to_index[r]];
    sq_by_rank[r] = v * v;
  }

  uint32_t mp_mask = 0;  // bit r set = rank r kept
  for (size_t r = n - static_cast<size_t>(kappa); r < n; ++r) mp_mask |= 1u << r;
  double mp_sq = pruned_sum_by_rank(sq_by_rank, mp_mask);

  double oracle_sq = mp_sq;
  if (kappa == 0) {
    oracle_sq = pruned_sum_by_rank(sq_by_rank, 0);
  } else if (kappa < n) {
    // Gosper's hack walks every n-bit mask with exactly kappa set bits.
    uint32_t mask = (1u << kappa) - 1;
    uint32_t limit = 1u << n;
    oracle_sq = pruned_sum_by_rank(sq_by_rank, mask);
    for (;;) {
      uint32_t c = mask & static_cast<uint32_t>(-static_cast<int32_t>(mask));
      uint32_t r = mask + c;
      if (r >= limit) break;
      mask = (((r ^ mask) >> 2) / c) | r;
      if (mask >= limit) break;
      double sq = pruned_sum_by_rank(sq_by_rank, mask);
      if (sq < oracle_sq) oracle_sq = sq;
    }
  } else {
    oracle_sq = 0.0;
  }

  FrobeniusOptimality result;
  result.mp_squared = mp_sq;
  result.oracle_squared = oracle_sq;
  result.mp_distortion = std::sqrt(mp_sq);
  result.oracle_distortion = std::sqrt(oracle_sq);
  return result;
}

DistortionReport peeling_bound_check(const DenseNet& net, size_t layer_index,
                                     std::span<const uint8_t> mask_bits,
                                     uint64_t samples, uint64_t seed) {
  if (layer_index >= net.depth()) {
    throw DimMismatch("layer index out of range");
  }
  const Matrix& w = net.layers[layer_index];
  if (mask_bits.size() != w.size()) {
    throw DimMismatch("mask bit count does not match the layer");
  }

  DenseNet pruned = net;
  double diff_sq = 0.0;
  for (size_t u = 0; u < w.size(); ++u) {
    if (!mask_bits[u]) {
      diff_sq += w.data[u] * w.data[u];
      pruned.layers[layer_index].data[u] = 0.0;
    }
  }

  // RHS of the bound with the ratio's denominator cancelled:
  // ||W_i - ~W_i||_F * prod_{j != i} ||W_j||_F.
  double rhs = std::sqrt(diff_sq);
  for (size_t j = 0; j < net.depth(); ++j) {
    if (j != layer_index) rhs *= frobenius_norm(net.layers[j]);
  }

  size_t dim = net.input_dim();
  size_t total = dim + samples;
  std::vector<double> distortion(total, 0.0);
  util::parallel_for(total, [&](size_t k) {
    std::vector<double> x;
    if (k < dim) {
      x.assign(dim, 0.0);
      x[k] = 1.0;  // canonical basis vectors cover axis-aligned worst cases
    } else {
      x = util::unit_sphere_point(dim, util::derive_seed(seed, k - dim));
    }
    std::vector<double> a = forward(net, x);
    std::vector<double> b = forward(pruned, x);
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      acc += d * d;
    }
    distortion[k] = std::sqrt(acc);
  });

  DistortionReport report;
  report.layer_index = layer_index;
  report.samples = samples;
  report.seed = seed;
  report.empirical_lower_bound = *std::max_element(distortion.begin(), distortion.end());
  report.bound_rhs = rhs;
  return report;
}

RemovalTrace greedy_removal_oracle(const ModelBundle& bundle, uint64_t remove_count) {
  size_t d = bundle.layers.size();
  std::vector<std::vector<uint8_t>> alive(d);
  uint64_t total = 0;
  for (size_t i = 0; i < d; ++i) {
    alive[i].assign(bundle.weights[i].size(), 1);
    total += bundle.weights[i].size();
  }
  if (remove_count > total) {
    throw InfeasibleBudget("cannot remove " + std::to_string(remove_count) +
                           " of " + std::to_string(total) + " weights");
  }

  // Per-layer descending magnitude order, fixed once; sums below accumulate
  // in this order so a head's damage is bit-identical to its LAMP score.
  std::vector<std::vector<uint64_t>> desc(d);
  for (size_t i = 0; i < d; ++i) {
    SortedIndexMap map = sort_indices(bundle.weights[i]);
    desc[i].assign(map.order.rbegin(), map.order.rend());
  }

  RemovalTrace trace;
  trace.removals.reserve(remove_count);
  for (uint64_t step = 0; step < remove_count; ++step) {
    bool found = false;
    Removal best;
    for (size_t i = 0; i < d; ++i) {
      double layer_sum = 0.0;
      for (uint64_t u : desc[i]) {
        if (alive[i][u]) layer_sum += squared(bundle.weights[i][u]);
      }
      for (uint64_t u = 0; u < alive[i].size(); ++u) {
        if (!alive[i][u]) continue;
        double damage = layer_sum > 0.0 ? squared(bundle.weights[i][u]) / layer_sum : 0.0;
        // Ties: the later layer goes first, then the smaller flat index —
        // the exact reverse of the keep priority used by allocation.
        bool better;
        if (!found) {
          better = true;
        } else if (damage != best.damage) {
          better = damage < best.damage;
        } else if (i != best.layer) {
          better = i > best.layer;
        } else {
          better = u < best.index;
        }
        if (better) {
          best = {static_cast<uint32_t>(i), u, damage};
          found = true;
        }
      }
    }
    alive[best.layer][best.index] = 0;
    trace.removals.push_back(best);
  }
  return trace;
}

EquivalenceResult lamp_greedy_equivalence_check(const ModelBundle& bundle,
                                                uint64_t remove_count) {
  struct Entry {
    double score;
    uint32_t layer;
    uint64_t index;
  };
  std::vector<Entry> entries;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    ScoreTensor scores = lamp_scores(bundle.weights[i], {}, bundle.layers[i].name);
    for (uint64_t u = 0; u < scores.values.size(); ++u) {
      entries.push_back({scores.values[u], static_cast<uint32_t>(i), u});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer > b.layer;
    return a.index < b.index;
  });

  RemovalTrace trace = greedy_removal_oracle(bundle, remove_count);

  EquivalenceResult result;
  for (size_t t = 0; t < trace.removals.size(); ++t) {
    const Removal& r = trace.removals[t];
    const Entry& e = entries[t];
    if (r.layer != e.layer || r.index != e.index) {
      std::ostringstream detail;
      detail << "step " << t << ": oracle removed (layer " << r.layer << ", index "
             << r.index << ", damage " << r.damage << "), score order expects (layer "
             << e.layer << ", index " << e.index << ", score " << e.score << ")";
      result.equal = false;
      result.first_divergence = t;
      result.detail = detail.str();
      return result;
    }
  }
  return result;
}

std::string to_json(const DistortionReport& report) {
  nlohmann::json doc;
  doc["layer_index"] = report.layer_index;
  doc["samples"] = report.samples;
  doc["seed"] = report.seed;
  doc["empirical_distortion_lower_bound"] = report.empirical_lower_bound;
  doc["bound_rhs"] = report.bound_rhs;
  return doc.dump(2) + "\n";
}

std::string to_json(const RemovalTrace& trace) {
  nlohmann::json removals = nlohmann::json::array();
  for (const Removal& r : trace.removals) {
    removals.push_back({{"layer", r.layer}, {"index", r.index}, {"damage", r.damage}});
  }
  nlohmann::json doc;
  doc["removals"] = std::move(removals);
  return doc.dump(2) + "\n";
}

}  // namespace lamp
