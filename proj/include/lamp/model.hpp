// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lamp {

enum class LayerKind { fully_connected, conv2d };

const char* kind_name(LayerKind kind);
LayerKind parse_kind(const std::string& name);  // throws ParseError

// One weight tensor. Shapes are [out, in] for fully-connected layers and
// [out_channels, in_channels, kernel_h, kernel_w] for conv2d. Weights are
// flattened row-major over the declared dims; offset/count locate the f32
// payload inside weights.bin.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::fully_connected;
  std::vector<uint64_t> shape;
  bool prunable = true;
  uint64_t offset = 0;
  uint64_t count = 0;

  uint64_t shape_product() const;
};

// An ordered set of layers plus their flat f32 weight arrays, the unit of
// ingestion and pruning. Loaded bundles are immutable values; share freely.
struct ModelBundle {
  std::vector<LayerSpec> layers;
  std::vector<std::vector<float>> weights;  // aligned with layers

  uint64_t total_weights() const;
  uint64_t prunable_weights() const;

  // Checks every structural invariant (unique names, count = prod(shape),
  // ascending non-overlapping blob ranges, finite weights, >= 1 prunable
  // layer). load_bundle always calls this; in-memory builders should too.
  void validate() const;
};

struct MaskLayer {
  std::string name;
  uint64_t count = 0;
  std::vector<uint8_t> bits;  // one entry per weight, 0 = pruned, 1 = survives
};

// Per-layer survival bits aligned with a bundle's flat weight arrays.
struct MaskBundle {
  std::vector<MaskLayer> layers;

  static MaskBundle all_ones(const ModelBundle& bundle);

  uint64_t surviving(size_t layer_index) const;
  uint64_t surviving_total() const;
  uint64_t surviving_prunable(const ModelBundle& bundle) const;

  // Throws MetadataMismatch unless layer names/counts line up with the
  // bundle, bits are 0/1, and every non-prunable layer is all ones.
  void validate_against(const ModelBundle& bundle) const;

  bool bit_equal(const MaskBundle& other) const;
};

// Bundle directory format: manifest.json + weights.bin (raw little-endian
// f32, contiguous in layer order). Mask directory format: mask.json +
// mask.bin (per-layer bit vectors, little bit order, each layer padded to a
// byte boundary). Both carry "format_version": 1.
ModelBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);

MaskBundle load_mask(const std::filesystem::path& dir);
MaskBundle load_mask(const std::filesystem::path& dir, const ModelBundle& bundle);
void save_mask(const MaskBundle& mask, const std::filesystem::path& dir);

// Returns a new bundle with weight[u] = 0 wherever bit u = 0. Non-prunable
// layers are returned bit-identical.
ModelBundle apply_mask(const ModelBundle& bundle, const MaskBundle& mask);

// Bit packing used by mask.bin, exposed for tests: bit u lands in byte u/8
// at position u%8.
std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits);
std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, uint64_t count);

}  // namespace lamp
