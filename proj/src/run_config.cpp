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

#include <cstdlib>
#include <fstream>

#include "semrel/harness.hpp"

namespace semrel {

void to_json(nlohmann::json& j, const AblationGrid& g) {
  j = {{"deltas", g.deltas},
       {"lambdas", g.lambdas},
       {"shift_epochs", g.shift_epochs},
       {"fusion_modes", g.fusion_modes},
       {"layer_sources", g.layer_sources},
       {"controls", g.controls},
       {"jobs", g.jobs}};
}

void from_json(const nlohmann::json& j, AblationGrid& g) {
  AblationGrid d;
  g.deltas = j.value("deltas", d.deltas);
  g.lambdas = j.value("lambdas", d.lambdas);
  g.shift_epochs = j.value("shift_epochs", d.shift_epochs);
  g.fusion_modes = j.value("fusion_modes", d.fusion_modes);
  g.layer_sources = j.value("layer_sources", d.layer_sources);
  g.controls = j.value("controls", d.controls);
  g.jobs = j.value("jobs", d.jobs);
}

void to_json(nlohmann::json& j, const ExportConfig& e) {
  j = {{"split", e.split}, {"sample_index", e.sample_index}, {"top_k", e.top_k}};
}

void from_json(const nlohmann::json& j, ExportConfig& e) {
  ExportConfig d;
  e.split = j.value("split", d.split);
  e.sample_index = j.value("sample_index", d.sample_index);
  e.top_k = j.value("top_k", d.top_k);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"dataset", c.dataset}, {"data", c.data},           {"model", c.model},       {"train", c.train},
       {"precision", c.precision}, {"out_dir", c.out_dir}, {"ablation", c.ablation}, {"exports", c.exports}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c.dataset = j.value("dataset", d.dataset);
  c.data = j.contains("data") ? j.at("data").get<DatasetSpec>() : d.data;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
  c.precision = j.value("precision", d.precision);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.ablation = j.contains("ablation") ? j.at("ablation").get<AblationGrid>() : d.ablation;
  c.exports = j.contains("exports") ? j.at("exports").get<ExportConfig>() : d.exports;
  if (c.precision != "f32" && c.precision != "f64")
    throw std::invalid_argument("precision must be f32 or f64, got " + c.precision);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  return nlohmann::json::parse(in).get<RunConfig>();
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("RUN_SEED"); s && *s) cfg.train.seed = std::stoull(s);
}

Dataset obtain_dataset(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return read_dataset(cfg.dataset);
  return generate_dataset(cfg.data);
}

ModelConfig resolve_model(const ModelConfig& model, const Dataset& ds) {
  ModelConfig m = model;
  m.vocab = ds.vocab();
  m.d1 = ds.spec.scene.d1;
  m.n_patches = ds.spec.scene.n_patches;
  std::size_t longest = 0;
  for (const auto* split : {&ds.train, &ds.eval})
    for (const auto& s : *split) longest = std::max(longest, s.question.size() + s.answer.size() - 1);
  m.max_seq = std::max(m.max_seq, longest);
  const auto& probe = !ds.train.empty() ? ds.train.front() : ds.eval.front();
  for (int layer : m.fusion.layers)
    if (!probe.features.has(layer))
      throw UsageError("fusion layer " + std::to_string(layer) + " is not present in the dataset features");
  m.validate();
  return m;
}

}  // namespace semrel
