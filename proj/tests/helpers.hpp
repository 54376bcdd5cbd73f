// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "lamp/model.hpp"

namespace lamp::testing {

// Bundle of fully-connected layers with shapes [n, 1], contiguous offsets.
inline ModelBundle fc_bundle(std::vector<std::vector<float>> layer_values,
                             std::vector<bool> prunable = {}) {
  ModelBundle bundle;
  uint64_t offset = 0;
  for (size_t i = 0; i < layer_values.size(); ++i) {
    LayerSpec layer;
    layer.name = "fc" + std::to_string(i);
    layer.kind = LayerKind::fully_connected;
    layer.shape = {layer_values[i].size(), 1};
    layer.prunable = prunable.empty() ? true : prunable[i];
    layer.offset = offset;
    layer.count = layer_values[i].size();
    offset += 4 * layer.count;
    bundle.layers.push_back(std::move(layer));
    bundle.weights.push_back(std::move(layer_values[i]));
  }
  return bundle;
}

inline LayerSpec layer_spec(std::string name, LayerKind kind, std::vector<uint64_t> shape,
                            bool prunable, uint64_t offset) {
  LayerSpec layer;
  layer.name = std::move(name);
  layer.kind = kind;
  layer.shape = std::move(shape);
  layer.prunable = prunable;
  layer.offset = offset;
  layer.count = layer.shape_product();
  return layer;
}

inline MaskBundle mask_from_bits(const ModelBundle& bundle,
                                 std::vector<std::vector<uint8_t>> bits) {
  MaskBundle mask;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    mask.layers.push_back({bundle.layers[i].name, bundle.layers[i].count,
                           std::move(bits[i])});
  }
  return mask;
}

}  // namespace lamp::testing
