#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fovea/core/tensor.hpp"

namespace fovea {

static_assert(std::endian::native == std::endian::little,
              "weight blobs are little-endian; big-endian hosts are unsupported");

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

/// Writes a manifest (name, shape, offset) and a packed little-endian
/// 32-bit float blob. Round trips are bit-exact.
inline void save_weights(const std::string& manifest_path, const std::string& blob_path,
                         const NamedTensors& arrays) {
  nlohmann::ordered_json manifest;
  manifest["format"] = 1;
  manifest["dtype"] = "f32le";
  auto entries = nlohmann::ordered_json::array();
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("save_weights: cannot open " + blob_path);
  std::uint64_t offset = 0;
  for (const auto& [name, t] : arrays) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["count"] = static_cast<std::uint64_t>(t.size());
    entries.push_back(std::move(e));
    blob.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(float)));
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  manifest["entries"] = std::move(entries);
  if (!blob) throw std::runtime_error("save_weights: short write to " + blob_path);
  blob.close();
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw std::runtime_error("save_weights: cannot open " + manifest_path);
  mf << manifest.dump(2) << "\n";
}

inline NamedTensors load_weights(const std::string& manifest_path, const std::string& blob_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("load_weights: cannot open " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("dtype", "") != std::string("f32le"))
    throw std::runtime_error("load_weights: unsupported dtype in " + manifest_path);
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("load_weights: cannot open " + blob_path);
  NamedTensors out;
  for (const auto& e : manifest.at("entries")) {
    const std::string name = e.at("name").get<std::string>();
    const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t count = e.at("count").get<std::uint64_t>();
    Tensor<float> t(shape);
    if (static_cast<std::uint64_t>(t.size()) != count)
      throw std::runtime_error("load_weights: count/shape mismatch for " + name);
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!blob) throw std::runtime_error("load_weights: truncated blob reading " + name);
    out.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace fovea
