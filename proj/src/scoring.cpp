// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lamp/errors.hpp"

namespace lamp {
namespace {

inline double squared(float w) {
  double d = w;
  return d * d;  // exact: f32 squares fit in an f64 mantissa
}

std::vector<uint64_t> surviving_indices(std::span<const float> weights,
                                        std::span<const uint8_t> survivors) {
  std::vector<uint64_t> idx;
  if (survivors.empty()) {
    idx.resize(weights.size());
    std::iota(idx.begin(), idx.end(), uint64_t{0});
  } else {
    idx.reserve(weights.size());
    for (uint64_t u = 0; u < weights.size(); ++u) {
      if (survivors[u]) idx.push_back(u);
    }
  }
  return idx;
}

void sort_by_magnitude(std::span<const float> weights, std::vector<uint64_t>& idx) {
  // stable_sort over indices already in ascending order implements the
  // ascending-flat-index tie rule.
  std::stable_sort(idx.begin(), idx.end(), [&](uint64_t a, uint64_t b) {
    return std::fabs(weights[a]) < std::fabs(weights[b]);
  });
}

}  // namespace

SortedIndexMap sort_indices(std::span<const float> weights) {
  SortedIndexMap map;
  map.order.resize(weights.size());
  std::iota(map.order.begin(), map.order.end(), uint64_t{0});
  sort_by_magnitude(weights, map.order);
  return map;
}

ScoreTensor lamp_scores(std::span<const float> weights,
                        std::span<const uint8_t> survivors,
                        std::string layer_name) {
  std::vector<uint64_t> idx = surviving_indices(weights, survivors);
  if (idx.empty()) throw EmptyLayer("no surviving weights in layer '" + layer_name + "'");
  sort_by_magnitude(weights, idx);

  // Denominators are the suffix sums of squared magnitudes, produced by one
  // descending pass. The top element's denominator is its own square, so its
  // score is exactly 1.0; accumulating in f64 keeps the within-layer order
  // of scores aligned with the order of squared magnitudes.
  std::vector<double> denom(idx.size());
  double run = 0.0;
  for (size_t r = idx.size(); r-- > 0;) {
    run += squared(weights[idx[r]]);
    denom[r] = run;
  }
  if (run == 0.0) {
    throw AllZero("surviving weights of layer '" + layer_name + "' are all zero");
  }

  ScoreTensor scores;
  scores.layer = std::move(layer_name);
  scores.kind = ScoreKind::lamp;
  scores.values.assign(weights.size(), 0.0);
  scores.valid.assign(weights.size(), 0);
  for (size_t r = 0; r < idx.size(); ++r) {
    uint64_t u = idx[r];
    scores.values[u] = squared(weights[u]) / denom[r];
    scores.valid[u] = 1;
  }
  return scores;
}

ScoreTensor magnitude_scores(std::span<const float> weights,
                             std::span<const uint8_t> survivors,
                             std::string layer_name) {
  std::vector<uint64_t> idx = surviving_indices(weights, survivors);
  if (idx.empty()) throw EmptyLayer("no surviving weights in layer '" + layer_name + "'");

  ScoreTensor scores;
  scores.layer = std::move(layer_name);
  scores.kind = ScoreKind::magnitude_sq;
  scores.values.assign(weights.size(), 0.0);
  scores.valid.assign(weights.size(), 0);
  for (uint64_t u : idx) {
    scores.values[u] = squared(weights[u]);
    scores.valid[u] = 1;
  }
  return scores;
}

}  // namespace lamp
