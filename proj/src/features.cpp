/*
 * Copyright 2026 The semrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "semrel/features.hpp"

#include <string>
#include <vector>

namespace semrel {

void MultilevelFeatures::validate() const {
  if (layers.empty()) throw DimensionError("MultilevelFeatures: no layers");
  for (const auto& [index, m] : layers) {
    if (index < 0) throw DimensionError("MultilevelFeatures: negative layer index " + std::to_string(index));
    if (m.shape() != Shape{n_patches, d1})
      throw DimensionError("MultilevelFeatures: layer " + std::to_string(index) + " has shape " + m.shape().str() +
                           ", expected " + Shape{n_patches, d1}.str());
  }
}

int MultilevelFeatures::final_index() const {
  if (layers.empty()) throw DimensionError("MultilevelFeatures: no layers");
  return layers.rbegin()->first;
}

const Tensor<float>& MultilevelFeatures::layer(int index) const {
  auto it = layers.find(index);
  if (it == layers.end()) throw DimensionError("MultilevelFeatures: layer " + std::to_string(index) + " not present");
  return it->second;
}

void write_features(const MultilevelFeatures& features, const std::filesystem::path& path) {
  features.validate();
  nlohmann::json manifest;
  manifest["format"] = "semrel.features";
  manifest["version"] = kFeatureFormatVersion;
  manifest["n_patches"] = features.n_patches;
  manifest["d1"] = features.d1;
  manifest["seed"] = features.producer_seed;
  std::vector<std::uint8_t> payload;
  payload.reserve(features.layers.size() * features.n_patches * features.d1 * 4);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [index, m] : features.layers) {
    const std::uint64_t offset = payload.size();
    for (float v : m.data()) append_f32(payload, v);
    entries.push_back({{"index", index}, {"offset", offset}, {"nbytes", payload.size() - offset}});
  }
  manifest["layers"] = std::move(entries);
  write_container(path, std::string_view(kFeatureMagic, 8), manifest, payload);
}

MultilevelFeatures read_features(const std::filesystem::path& path) {
  std::uint64_t payload_size = 0;
  const auto manifest = read_manifest(path, std::string_view(kFeatureMagic, 8), &payload_size);
  MultilevelFeatures f;
  std::vector<int> indices;
  std::vector<BlobRange> blobs;
  try {
    if (manifest.at("version").get<int>() != kFeatureFormatVersion)
      throw FormatError(FormatErrc::version_mismatch, path.string() + ": feature file version " +
                                                          manifest.at("version").dump() + ", expected " +
                                                          std::to_string(kFeatureFormatVersion));
    f.n_patches = manifest.at("n_patches").get<std::size_t>();
    f.d1 = manifest.at("d1").get<std::size_t>();
    f.producer_seed = manifest.value("seed", std::uint64_t{0});
    for (const auto& e : manifest.at("layers")) {
      indices.push_back(e.at("index").get<int>());
      blobs.push_back({e.at("offset").get<std::uint64_t>(), e.at("nbytes").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_manifest, path.string() + ": " + e.what());
  }
  if (f.n_patches == 0 || f.d1 == 0 || indices.empty())
    throw FormatError(FormatErrc::shape_inconsistent, path.string() + ": empty feature grid");
  const std::uint64_t per_layer = f.n_patches * f.d1 * 4;
  validate_blob_layout(blobs, std::vector<std::uint64_t>(blobs.size(), per_layer), payload_size);

  const auto payload = read_payload(path);
  if (payload.size() != payload_size)
    throw FormatError(FormatErrc::truncated, path.string() + ": payload changed while reading");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    Tensor<float> m = Tensor<float>::matrix(f.n_patches, f.d1);
    const std::uint8_t* p = payload.data() + blobs[k].offset;
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] = load_f32(p + 4 * i);
    if (!f.layers.emplace(indices[k], std::move(m)).second)
      throw FormatError(FormatErrc::shape_inconsistent, path.string() + ": duplicate layer index");
  }
  return f;
}

}  // namespace semrel
