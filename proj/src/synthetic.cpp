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

#include "semrel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "semrel/rng.hpp"

namespace semrel {

void SceneConfig::validate() const {
  if (n_concepts < 2) throw std::invalid_argument("SceneConfig: n_concepts must be >= 2");
  if (n_relations < 1) throw std::invalid_argument("SceneConfig: n_relations must be >= 1");
  if (n_patches < 2) throw std::invalid_argument("SceneConfig: n_patches must be >= 2");
  if (d1 == 0) throw std::invalid_argument("SceneConfig: d1 must be positive");
  if (TokenLayout::kConceptBase + n_concepts + n_relations > vocab)
    throw std::invalid_argument("SceneConfig: vocab too small for concept and relation tokens");
  if (intermediate_layer_index <= 0 || intermediate_layer_index >= encoder_depth)
    throw std::invalid_argument("SceneConfig: intermediate layer must lie strictly inside the encoder");
  if (layers.empty()) throw std::invalid_argument("SceneConfig: no layers to emit");
  for (int l : layers)
    if (l < 0 || l > encoder_depth) throw std::invalid_argument("SceneConfig: layer index outside encoder depth");
  if (fixed_pair && (fixed_pair->first >= n_patches || fixed_pair->second >= n_patches ||
                     fixed_pair->first == fixed_pair->second))
    throw std::invalid_argument("SceneConfig: fixed_pair must name two distinct patches");
}

double SceneConfig::relation_gain(int layer) const {
  if (layer <= 0 || layer >= encoder_depth) return 0.0;
  const double width = std::min(intermediate_layer_index, encoder_depth - intermediate_layer_index);
  const double g = 1.0 - std::abs(layer - intermediate_layer_index) / width;
  return relation_amplitude * std::max(0.0, g);
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = {{"n_patches", c.n_patches},
       {"d1", c.d1},
       {"n_concepts", c.n_concepts},
       {"n_relations", c.n_relations},
       {"vocab", c.vocab},
       {"encoder_depth", c.encoder_depth},
       {"intermediate_layer_index", c.intermediate_layer_index},
       {"layers", c.layers},
       {"relation_amplitude", c.relation_amplitude},
       {"noise", c.noise},
       {"background_scale", c.background_scale},
       {"world_seed", c.world_seed}};
  if (c.fixed_pair) j["fixed_pair"] = {c.fixed_pair->first, c.fixed_pair->second};
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
  SceneConfig d;
  c.n_patches = j.value("n_patches", d.n_patches);
  c.d1 = j.value("d1", d.d1);
  c.n_concepts = j.value("n_concepts", d.n_concepts);
  c.n_relations = j.value("n_relations", d.n_relations);
  c.vocab = j.value("vocab", d.vocab);
  c.encoder_depth = j.value("encoder_depth", d.encoder_depth);
  c.intermediate_layer_index = j.value("intermediate_layer_index", d.intermediate_layer_index);
  c.layers = j.value("layers", d.layers);
  c.relation_amplitude = j.value("relation_amplitude", d.relation_amplitude);
  c.noise = j.value("noise", d.noise);
  c.background_scale = j.value("background_scale", d.background_scale);
  c.world_seed = j.value("world_seed", d.world_seed);
  c.fixed_pair.reset();
  if (j.contains("fixed_pair")) {
    const auto& p = j.at("fixed_pair");
    c.fixed_pair = std::make_pair(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  }
}

std::vector<int> TokenLayout::answer_tokens() const {
  std::vector<int> out;
  for (std::size_t r = 0; r < n_relations; ++r) out.push_back(relation_token(r));
  return out;
}

TokenLayout token_layout(const SceneConfig& cfg) { return {cfg.n_concepts, cfg.n_relations}; }

std::vector<int> answer_for(const RelationTruth& truth, const TokenLayout& layout) {
  return {layout.relation_token(truth.relation)};
}

std::vector<std::size_t> relation_region(std::size_t n_patches, std::size_t a, std::size_t b) {
  auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n_patches))));
  if (side * side != n_patches) side = n_patches;  // non-square grids are a single row
  const std::size_t r0 = std::min(a / side, b / side), r1 = std::max(a / side, b / side);
  const std::size_t c0 = std::min(a % side, b % side), c1 = std::max(a % side, b % side);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_patches; ++i) {
    const std::size_t r = i / side, c = i % side;
    if (r >= r0 && r <= r1 && c >= c0 && c <= c1) out.push_back(i);
  }
  return out;
}

namespace {

struct World {
  std::vector<std::vector<double>> concepts;
  std::vector<std::vector<double>> relations;
};

World make_world(const SceneConfig& cfg) {
  SplitMix64 rng(derive_seed(cfg.world_seed, 1));
  World w;
  auto draw = [&](std::size_t count) {
    std::vector<std::vector<double>> out(count, std::vector<double>(cfg.d1));
    for (auto& v : out)
      for (auto& x : v) x = rng.normal();
    return out;
  };
  w.concepts = draw(cfg.n_concepts);
  w.relations = draw(cfg.n_relations);
  return w;
}

}  // namespace

SyntheticSample generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg);
  SplitMix64 rng(seed);

  SyntheticSample s;
  s.seed = seed;
  std::vector<std::size_t> concept_of(cfg.n_patches);
  for (auto& c : concept_of) c = rng.below(cfg.n_concepts);
  if (cfg.fixed_pair) {
    s.truth.patch_a = cfg.fixed_pair->first;
    s.truth.patch_b = cfg.fixed_pair->second;
    rng.next();
    rng.next();
  } else {
    s.truth.patch_a = rng.below(cfg.n_patches);
    s.truth.patch_b = (s.truth.patch_a + 1 + rng.below(cfg.n_patches - 1)) % cfg.n_patches;
    rng.next();
  }
  s.truth.relation = rng.below(cfg.n_relations);

  const auto region = relation_region(cfg.n_patches, s.truth.patch_a, s.truth.patch_b);
  std::vector<bool> in_region(cfg.n_patches, false);
  for (auto i : region) in_region[i] = true;

  s.features.n_patches = cfg.n_patches;
  s.features.d1 = cfg.d1;
  s.features.producer_seed = seed;
  std::vector<int> layers = cfg.layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (int l : layers) {
    SplitMix64 noise_rng(derive_seed(seed, 2, static_cast<std::uint64_t>(l)));
    const double gain = cfg.relation_gain(l);
    Tensor<float> m = Tensor<float>::matrix(cfg.n_patches, cfg.d1);
    for (std::size_t i = 0; i < cfg.n_patches; ++i) {
      const bool object = i == s.truth.patch_a || i == s.truth.patch_b;
      const double strength = object ? 1.0 : cfg.background_scale;
      for (std::size_t k = 0; k < cfg.d1; ++k) {
        double v = strength * world.concepts[concept_of[i]][k] + cfg.noise * noise_rng.normal();
        if (in_region[i]) v += gain * world.relations[s.truth.relation][k];
        m(i, k) = static_cast<float>(v);
      }
    }
    s.features.layers.emplace(l, std::move(m));
  }

  const TokenLayout layout = token_layout(cfg);
  s.question = {TokenLayout::kBos, layout.concept_token(concept_of[s.truth.patch_a]),
                layout.concept_token(concept_of[s.truth.patch_b]), TokenLayout::kSep};
  s.answer = answer_for(s.truth, layout);
  return s;
}

}  // namespace semrel
