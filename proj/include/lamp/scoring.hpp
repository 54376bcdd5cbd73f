// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lamp {

// Permutation of a layer's flat indices in ascending magnitude order.
// Ties are broken by ascending flat index so the order is deterministic
// across runs and platforms.
struct SortedIndexMap {
  std::vector<uint64_t> order;  // order[rank] = flat index
  static constexpr const char* tie_break = "ascending_flat_index";
};

SortedIndexMap sort_indices(std::span<const float> weights);

enum class ScoreKind { lamp, magnitude_sq };

// Per-connection importance values aligned 1:1 with a layer's flat weights.
// Entries outside the surviving set carry value 0 and valid = 0.
struct ScoreTensor {
  std::string layer;
  ScoreKind kind = ScoreKind::lamp;
  std::vector<double> values;
  std::vector<uint8_t> valid;
};

// score(u) = W[u]^2 / sum of W[v]^2 over surviving v of equal or larger rank
// in the sorted index map. Denominators come from one descending cumulative
// pass accumulated in f64; the largest surviving weight scores exactly 1.0.
// An empty `survivors` span means every weight survives.
//
// Throws EmptyLayer when no weight survives and AllZero when the surviving
// sum of squares is zero.
ScoreTensor lamp_scores(std::span<const float> weights,
                        std::span<const uint8_t> survivors = {},
                        std::string layer_name = {});

// score(u) = W[u]^2. Throws EmptyLayer only.
ScoreTensor magnitude_scores(std::span<const float> weights,
                             std::span<const uint8_t> survivors = {},
                             std::string layer_name = {});

}  // namespace lamp
