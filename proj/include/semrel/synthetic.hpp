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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semrel/features.hpp"

namespace semrel {

// Generator for relational scenes standing in for a vision encoder.
//
// Every patch shows one of n_concepts concepts. Two designated patches (a, b)
// are the related pair: they carry their concept embedding at full strength,
// all other patches at `background_scale`. Each emitted encoder layer l gets
//
//   X^l_i = strength_i * concept[c_i] + noise * N(0, 1)
//           + [i in box(a, b)] * relation_gain(l) * relation[r]
//
// where box(a, b) is the bounding box of a and b on the sqrt(N) x sqrt(N)
// patch grid, and relation_gain(l) is a triangle peaking at the intermediate
// layer with value `relation_amplitude` and falling to zero at layer 0 and at
// the final layer. The relation id is therefore decodable only from
// intermediate layers. Concept and relation vectors come from `world_seed` so
// they are shared by every sample of a dataset.
struct SceneConfig {
  std::size_t n_patches = 16;
  std::size_t d1 = 32;
  std::size_t n_concepts = 8;
  std::size_t n_relations = 4;
  std::size_t vocab = 64;
  int encoder_depth = 24;
  int intermediate_layer_index = 12;
  std::vector<int> layers{12, 24};
  double relation_amplitude = 1.5;
  double noise = 0.1;
  double background_scale = 0.3;
  std::uint64_t world_seed = 0x5EEDC0DEULL;
  std::optional<std::pair<std::size_t, std::size_t>> fixed_pair;

  void validate() const;
  double relation_gain(int layer) const;
};

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);

// Token ids: 0 pad, 1 BOS, 2 SEP, then concept tokens, then relation tokens.
struct TokenLayout {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kConceptBase = 8;

  std::size_t n_concepts = 0;
  std::size_t n_relations = 0;

  int concept_token(std::size_t c) const { return kConceptBase + static_cast<int>(c); }
  int relation_token(std::size_t r) const { return kConceptBase + static_cast<int>(n_concepts + r); }
  std::vector<int> answer_tokens() const;
};

TokenLayout token_layout(const SceneConfig& cfg);

struct RelationTruth {
  std::size_t patch_a = 0;
  std::size_t patch_b = 0;
  std::size_t relation = 0;
};

struct SyntheticSample {
  std::string id;
  std::uint64_t seed = 0;
  MultilevelFeatures features;
  std::vector<int> question;
  std::vector<int> answer;
  RelationTruth truth;
};

SyntheticSample generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg);

// The fixed answer rule: one relation token.
std::vector<int> answer_for(const RelationTruth& truth, const TokenLayout& layout);

// Patch indices inside the bounding box of a and b.
std::vector<std::size_t> relation_region(std::size_t n_patches, std::size_t a, std::size_t b);

}  // namespace semrel
