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
#include <vector>

#include "semrel/synthetic.hpp"

namespace semrel {

struct DatasetSpec {
  SceneConfig scene;
  std::size_t n_train = 256;
  std::size_t n_eval = 1024;
  std::uint64_t seed = 20260101;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct Dataset {
  DatasetSpec spec;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> eval;

  std::size_t vocab() const { return spec.scene.vocab; }
  std::vector<int> answer_tokens() const { return token_layout(spec.scene).answer_tokens(); }
};

// Train and eval samples come from disjoint seed streams.
Dataset generate_dataset(const DatasetSpec& spec);

// Layout:
//   <dir>/index.json            spec, vocab, answer tokens, train/eval id lists
//   <dir>/samples/<id>.feat     feature container
//   <dir>/samples/<id>.json     question, answer, relation truth, seed
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace semrel
