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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include "semrel/container.hpp"
#include "semrel/tensor.hpp"

namespace semrel {

inline constexpr int kFeatureFormatVersion = 1;
inline constexpr char kFeatureMagic[] = "SRFEAT01";

// Per-source-layer patch features of one image. Key 0 is the raw (not
// encoded) input; the largest key is the encoder's final layer.
struct MultilevelFeatures {
  std::size_t n_patches = 0;
  std::size_t d1 = 0;
  std::map<int, Tensor<float>> layers;
  std::uint64_t producer_seed = 0;

  void validate() const;
  int final_index() const;
  bool has(int index) const { return layers.count(index) != 0; }
  const Tensor<float>& layer(int index) const;
};

void write_features(const MultilevelFeatures& features, const std::filesystem::path& path);

// Validates the manifest before touching the payload. Throws FormatError with
// version_mismatch, truncated or shape_inconsistent; nothing is returned on
// failure.
MultilevelFeatures read_features(const std::filesystem::path& path);

}  // namespace semrel
