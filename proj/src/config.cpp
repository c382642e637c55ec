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

#include "semrel/config.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace semrel {

void ModelConfig::validate() const {
  if (vocab == 0 || d_model == 0 || n_layers == 0 || ffn_mult == 0 || max_seq == 0)
    throw std::invalid_argument("ModelConfig: extents must be positive");
  if (d_hidden == 0 || d_hidden >= std::min(d1, d_model))
    throw std::invalid_argument("ModelConfig: d_hidden must satisfy 0 < d_hidden < min(d1, d_model)");
  fusion.validate();
}

const char* to_string(CrossAttentionKind k) {
  return k == CrossAttentionKind::baseline ? "baseline" : "inheritable";
}

CrossAttentionKind parse_cross_attention(const std::string& s) {
  if (s == "inheritable") return CrossAttentionKind::inheritable;
  if (s == "baseline") return CrossAttentionKind::baseline;
  throw std::invalid_argument("unknown cross-attention kind '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("TrainConfig: epochs and batch_size must be positive");
  if (shift_epoch > epochs) throw std::invalid_argument("TrainConfig: shift_epoch must not exceed epochs");
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("TrainConfig: delta must lie in [0, 1)");
  if (!(lambda_decay > 0.0 && lambda_decay <= 1.0))
    throw std::invalid_argument("TrainConfig: lambda_decay must lie in (0, 1]");
  if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: bad lr or momentum");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab", c.vocab},         {"d_model", c.d_model},   {"n_layers", c.n_layers},
       {"ffn_mult", c.ffn_mult},   {"max_seq", c.max_seq},   {"d1", c.d1},
       {"d_hidden", c.d_hidden},   {"n_patches", c.n_patches}, {"fusion", c.fusion},
       {"peft", c.peft},           {"embed_std", c.embed_std}, {"cross_pos_std", c.cross_pos_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab = j.value("vocab", d.vocab);
  c.d_model = j.value("d_model", d.d_model);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.max_seq = j.value("max_seq", d.max_seq);
  c.d1 = j.value("d1", d.d1);
  c.d_hidden = j.value("d_hidden", d.d_hidden);
  c.n_patches = j.value("n_patches", d.n_patches);
  c.fusion = j.contains("fusion") ? j.at("fusion").get<FusionSpec>() : d.fusion;
  c.peft = j.value("peft", d.peft);
  c.embed_std = j.value("embed_std", d.embed_std);
  c.cross_pos_std = j.value("cross_pos_std", d.cross_pos_std);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"delta", c.delta},
       {"lambda_decay", c.lambda_decay},
       {"shift_epoch", c.shift_epoch},
       {"seed", c.seed},
       {"attention", to_string(c.attention)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.momentum = j.value("momentum", d.momentum);
  c.delta = j.value("delta", d.delta);
  c.lambda_decay = j.value("lambda_decay", d.lambda_decay);
  c.shift_epoch = j.value("shift_epoch", d.shift_epoch);
  c.seed = j.value("seed", d.seed);
  c.attention = parse_cross_attention(j.value("attention", std::string(to_string(d.attention))));
}

double cosine_lr(double lr0, std::size_t step, std::size_t total) {
  if (total == 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace semrel
