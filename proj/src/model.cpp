// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#include "lamp/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lamp/errors.hpp"

namespace lamp {
namespace {

using nlohmann::json;

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return data;
}

// All files are written to a temp name in the target directory first and
// renamed into place, so readers never observe partial contents.
void write_file_atomic(const std::filesystem::path& path,
                       const void* data, size_t size) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

float load_f32_le(const uint8_t* p) {
  uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                  (static_cast<uint32_t>(p[2]) << 16) |
                  (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void store_f32_le(float value, std::vector<uint8_t>& out) {
  uint32_t bits = std::bit_cast<uint32_t>(value);
  out.push_back(static_cast<uint8_t>(bits & 0xff));
  out.push_back(static_cast<uint8_t>((bits >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((bits >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((bits >> 24) & 0xff));
}

json parse_json_file(const std::filesystem::path& path) {
  std::vector<uint8_t> raw = read_file(path);
  json doc = json::parse(raw.begin(), raw.end(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ParseError("malformed JSON in " + path.string());
  return doc;
}

void check_format_version(const json& doc, const std::filesystem::path& path) {
  if (!doc.is_object() || !doc.contains("format_version") ||
      !doc["format_version"].is_number_integer() ||
      doc["format_version"].get<int>() != 1) {
    throw ParseError("unsupported or missing format_version in " + path.string());
  }
}

}  // namespace

const char* kind_name(LayerKind kind) {
  return kind == LayerKind::fully_connected ? "fully_connected" : "conv2d";
}

LayerKind parse_kind(const std::string& name) {
  if (name == "fully_connected") return LayerKind::fully_connected;
  if (name == "conv2d") return LayerKind::conv2d;
  throw ParseError("unknown layer kind '" + name + "'");
}

uint64_t LayerSpec::shape_product() const {
  uint64_t p = 1;
  for (uint64_t d : shape) p *= d;
  return p;
}

uint64_t ModelBundle::total_weights() const {
  uint64_t total = 0;
  for (const auto& layer : layers) total += layer.count;
  return total;
}

uint64_t ModelBundle::prunable_weights() const {
  uint64_t total = 0;
  for (const auto& layer : layers) {
    if (layer.prunable) total += layer.count;
  }
  return total;
}

void ModelBundle::validate() const {
  if (layers.empty()) throw ParseError("bundle has no layers");
  if (layers.size() != weights.size()) {
    throw ParseError("layer/weight array count mismatch");
  }

  std::set<std::string> names;
  bool any_prunable = false;
  uint64_t prev_end = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    if (layer.name.empty()) throw ParseError("layer " + std::to_string(i) + " has empty name");
    if (!names.insert(layer.name).second) {
      throw ParseError("duplicate layer name '" + layer.name + "'");
    }
    size_t want_dims = layer.kind == LayerKind::fully_connected ? 2u : 4u;
    if (layer.shape.size() != want_dims) {
      throw ShapeMismatch("layer '" + layer.name + "' expects " +
                          std::to_string(want_dims) + " dims, got " +
                          std::to_string(layer.shape.size()));
    }
    for (uint64_t d : layer.shape) {
      if (d == 0) throw ParseError("layer '" + layer.name + "' has a zero dim");
    }
    if (layer.count != layer.shape_product()) {
      throw ShapeMismatch("layer '" + layer.name + "' count " +
                          std::to_string(layer.count) + " != product of dims " +
                          std::to_string(layer.shape_product()));
    }
    if (i > 0 && layer.offset < prev_end) {
      throw OverlapError("layer '" + layer.name + "' blob range overlaps the previous layer");
    }
    prev_end = layer.offset + 4 * layer.count;

    if (weights[i].size() != layer.count) {
      throw ShapeMismatch("layer '" + layer.name + "' has " +
                          std::to_string(weights[i].size()) + " weights, expected " +
                          std::to_string(layer.count));
    }
    for (float w : weights[i]) {
      if (!std::isfinite(w)) {
        throw NonFiniteWeight("layer '" + layer.name + "' contains NaN or Inf");
      }
    }
    any_prunable = any_prunable || layer.prunable;
  }
  if (!any_prunable) throw ParseError("bundle has no prunable layer");
}

MaskBundle MaskBundle::all_ones(const ModelBundle& bundle) {
  MaskBundle mask;
  mask.layers.reserve(bundle.layers.size());
  for (const auto& layer : bundle.layers) {
    mask.layers.push_back({layer.name, layer.count,
                           std::vector<uint8_t>(layer.count, 1)});
  }
  return mask;
}

uint64_t MaskBundle::surviving(size_t layer_index) const {
  uint64_t n = 0;
  for (uint8_t b : layers[layer_index].bits) n += b;
  return n;
}

uint64_t MaskBundle::surviving_total() const {
  uint64_t n = 0;
  for (size_t i = 0; i < layers.size(); ++i) n += surviving(i);
  return n;
}

uint64_t MaskBundle::surviving_prunable(const ModelBundle& bundle) const {
  uint64_t n = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (bundle.layers[i].prunable) n += surviving(i);
  }
  return n;
}

void MaskBundle::validate_against(const ModelBundle& bundle) const {
  if (layers.size() != bundle.layers.size()) {
    throw MetadataMismatch("mask has " + std::to_string(layers.size()) +
                           " layers, bundle has " + std::to_string(bundle.layers.size()));
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    const MaskLayer& m = layers[i];
    const LayerSpec& l = bundle.layers[i];
    if (m.name != l.name) {
      throw MetadataMismatch("mask layer '" + m.name + "' does not match bundle layer '" +
                             l.name + "'");
    }
    if (m.count != l.count || m.bits.size() != l.count) {
      throw MetadataMismatch("mask layer '" + m.name + "' count mismatch");
    }
    for (uint8_t b : m.bits) {
      if (b > 1) throw MetadataMismatch("mask layer '" + m.name + "' has a non-binary bit");
    }
    if (!l.prunable) {
      for (uint8_t b : m.bits) {
        if (b != 1) {
          throw MetadataMismatch("non-prunable layer '" + m.name + "' has cleared bits");
        }
      }
    }
  }
}

bool MaskBundle::bit_equal(const MaskBundle& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name != other.layers[i].name) return false;
    if (layers[i].bits != other.layers[i].bits) return false;
  }
  return true;
}

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (size_t u = 0; u < bits.size(); ++u) {
    if (bits[u]) bytes[u >> 3] |= static_cast<uint8_t>(1u << (u & 7));
  }
  return bytes;
}

std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, uint64_t count) {
  std::vector<uint8_t> bits(count, 0);
  for (uint64_t u = 0; u < count; ++u) {
    bits[u] = (bytes[u >> 3] >> (u & 7)) & 1u;
  }
  return bits;
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  json manifest = parse_json_file(dir / "manifest.json");
  check_format_version(manifest, dir / "manifest.json");

  ModelBundle bundle;
  try {
    if (manifest.at("dtype").get<std::string>() != "f32") {
      throw ParseError("unsupported dtype in " + (dir / "manifest.json").string());
    }
    if (manifest.at("endianness").get<std::string>() != "little") {
      throw ParseError("unsupported endianness in " + (dir / "manifest.json").string());
    }
    for (const json& entry : manifest.at("layers")) {
      LayerSpec layer;
      layer.name = entry.at("name").get<std::string>();
      layer.kind = parse_kind(entry.at("kind").get<std::string>());
      layer.shape = entry.at("shape").get<std::vector<uint64_t>>();
      layer.prunable = entry.at("prunable").get<bool>();
      layer.offset = entry.at("offset").get<uint64_t>();
      layer.count = entry.at("count").get<uint64_t>();
      bundle.layers.push_back(std::move(layer));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest field error: ") + e.what());
  }

  std::vector<uint8_t> blob = read_file(dir / "weights.bin");
  bundle.weights.resize(bundle.layers.size());
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const LayerSpec& layer = bundle.layers[i];
    uint64_t end = layer.offset + 4 * layer.count;
    if (end > blob.size()) {
      throw OverlapError("layer '" + layer.name + "' blob range [" +
                         std::to_string(layer.offset) + ", " + std::to_string(end) +
                         ") exceeds weights.bin size " + std::to_string(blob.size()));
    }
    std::vector<float>& w = bundle.weights[i];
    w.resize(layer.count);
    for (uint64_t u = 0; u < layer.count; ++u) {
      w[u] = load_f32_le(blob.data() + layer.offset + 4 * u);
    }
  }

  bundle.validate();
  return bundle;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  // Offsets are normalized to a contiguous layout on save.
  std::vector<uint8_t> blob;
  json layers = json::array();
  uint64_t offset = 0;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const LayerSpec& layer = bundle.layers[i];
    json entry;
    entry["name"] = layer.name;
    entry["kind"] = kind_name(layer.kind);
    entry["shape"] = layer.shape;
    entry["prunable"] = layer.prunable;
    entry["offset"] = offset;
    entry["count"] = layer.count;
    layers.push_back(std::move(entry));
    for (float w : bundle.weights[i]) store_f32_le(w, blob);
    offset += 4 * layer.count;
  }

  json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = "f32";
  manifest["endianness"] = "little";
  manifest["layers"] = std::move(layers);

  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file_atomic(dir / "weights.bin", blob.data(), blob.size());
}

MaskBundle load_mask(const std::filesystem::path& dir) {
  json meta = parse_json_file(dir / "mask.json");
  check_format_version(meta, dir / "mask.json");

  MaskBundle mask;
  try {
    for (const json& entry : meta.at("layers")) {
      MaskLayer layer;
      layer.name = entry.at("name").get<std::string>();
      layer.count = entry.at("count").get<uint64_t>();
      mask.layers.push_back(std::move(layer));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("mask metadata field error: ") + e.what());
  }

  std::vector<uint8_t> blob = read_file(dir / "mask.bin");
  uint64_t offset = 0;
  for (MaskLayer& layer : mask.layers) {
    uint64_t bytes = (layer.count + 7) / 8;
    if (offset + bytes > blob.size()) {
      throw ParseError("mask.bin truncated for layer '" + layer.name + "'");
    }
    std::vector<uint8_t> packed(blob.begin() + static_cast<ptrdiff_t>(offset),
                                blob.begin() + static_cast<ptrdiff_t>(offset + bytes));
    layer.bits = unpack_bits(packed, layer.count);
    offset += bytes;
  }
  if (offset != blob.size()) {
    throw ParseError("mask.bin has trailing bytes");
  }
  return mask;
}

MaskBundle load_mask(const std::filesystem::path& dir, const ModelBundle& bundle) {
  MaskBundle mask = load_mask(dir);
  mask.validate_against(bundle);
  return mask;
}

void save_mask(const MaskBundle& mask, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  json layers = json::array();
  std::vector<uint8_t> blob;
  for (const MaskLayer& layer : mask.layers) {
    json entry;
    entry["name"] = layer.name;
    entry["count"] = layer.count;
    layers.push_back(std::move(entry));
    std::vector<uint8_t> packed = pack_bits(layer.bits);
    blob.insert(blob.end(), packed.begin(), packed.end());
  }

  json meta;
  meta["format_version"] = 1;
  meta["layers"] = std::move(layers);

  write_file_atomic(dir / "mask.json", meta.dump(2) + "\n");
  write_file_atomic(dir / "mask.bin", blob.data(), blob.size());
}

ModelBundle apply_mask(const ModelBundle& bundle, const MaskBundle& mask) {
  mask.validate_against(bundle);
  ModelBundle pruned = bundle;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    if (!bundle.layers[i].prunable) continue;
    const std::vector<uint8_t>& bits = mask.layers[i].bits;
    std::vector<float>& w = pruned.weights[i];
    for (uint64_t u = 0; u < bits.size(); ++u) {
      if (!bits[u]) w[u] = 0.0f;
    }
  }
  return pruned;
}

}  // namespace lamp
