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
#include <string>

#include <json.hpp>

#include "semrel/srproj.hpp"

namespace semrel {

struct ModelConfig {
  std::size_t vocab = 64;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_seq = 16;
  std::size_t d1 = 32;
  std::size_t d_hidden = 16;
  std::size_t n_patches = 16;
  FusionSpec fusion;
  // Freeze the LM body; train only projectors, P1/P2 and Lambda.
  bool peft = false;
  double embed_std = 1.0;
  double cross_pos_std = 0.1;

  std::size_t n_vision() const { return n_patches * fusion.token_multiplier(); }
  void validate() const;
};

enum class CrossAttentionKind {
  inheritable,  // masked, M evolves once active
  baseline,     // unmasked SiLU cross-attention, no M at all
};

const char* to_string(CrossAttentionKind k);
CrossAttentionKind parse_cross_attention(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double lr = 9e-3;
  double momentum = 0.0;
  double delta = 0.3;
  double lambda_decay = 0.85;
  // Epochs are 1-indexed; M updates run during epoch e iff e >= shift_epoch.
  std::size_t shift_epoch = 14;
  std::uint64_t seed = 1;
  CrossAttentionKind attention = CrossAttentionKind::inheritable;

  bool active_in_epoch(std::size_t epoch) const { return epoch >= shift_epoch; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Cosine decay from lr0 at step 0 to 0 at step total.
double cosine_lr(double lr0, std::size_t step, std::size_t total);

}  // namespace semrel
