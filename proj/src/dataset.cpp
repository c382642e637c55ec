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

#include "semrel/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "semrel/rng.hpp"

namespace semrel {

namespace {

constexpr std::uint64_t kTrainStream = 100;
constexpr std::uint64_t kEvalStream = 200;

std::string sample_id(const char* split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", split, i);
  return buf;
}

nlohmann::json sidecar(const SyntheticSample& s) {
  return {{"id", s.id},
          {"seed", s.seed},
          {"question", s.question},
          {"answer", s.answer},
          {"relation", {{"patch_a", s.truth.patch_a}, {"patch_b", s.truth.patch_b}, {"relation", s.truth.relation}}}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

SyntheticSample load_sample(const std::filesystem::path& dir, const std::string& id) {
  const auto meta = read_json(dir / "samples" / (id + ".json"));
  SyntheticSample s;
  s.id = id;
  s.seed = meta.at("seed").get<std::uint64_t>();
  s.question = meta.at("question").get<std::vector<int>>();
  s.answer = meta.at("answer").get<std::vector<int>>();
  const auto& rel = meta.at("relation");
  s.truth = {rel.at("patch_a").get<std::size_t>(), rel.at("patch_b").get<std::size_t>(),
             rel.at("relation").get<std::size_t>()};
  s.features = read_features(dir / "samples" / (id + ".feat"));
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"scene", s.scene}, {"n_train", s.n_train}, {"n_eval", s.n_eval}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.scene = j.contains("scene") ? j.at("scene").get<SceneConfig>() : d.scene;
  s.n_train = j.value("n_train", d.n_train);
  s.n_eval = j.value("n_eval", d.n_eval);
  s.seed = j.value("seed", d.seed);
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.scene.validate();
  Dataset ds;
  ds.spec = spec;
  std::set<std::uint64_t> seeds;
  auto make = [&](const char* split, std::uint64_t stream, std::size_t count, std::vector<SyntheticSample>& out) {
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t seed = derive_seed(spec.seed, stream, i);
      if (!seeds.insert(seed).second) throw std::logic_error("dataset seed collision");
      auto s = generate_synthetic_scene(seed, spec.scene);
      s.id = sample_id(split, i);
      out.push_back(std::move(s));
    }
  };
  make("train", kTrainStream, spec.n_train, ds.train);
  make("eval", kEvalStream, spec.n_eval, ds.eval);
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "samples");
  nlohmann::json index;
  index["format"] = "semrel.dataset";
  index["version"] = 1;
  index["spec"] = dataset.spec;
  index["vocab"] = dataset.vocab();
  index["answer_tokens"] = dataset.answer_tokens();
  auto ids = [](const std::vector<SyntheticSample>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
  };
  index["train"] = ids(dataset.train);
  index["eval"] = ids(dataset.eval);
  for (const auto* split : {&dataset.train, &dataset.eval})
    for (const auto& s : *split) {
      write_features(s.features, dir / "samples" / (s.id + ".feat"));
      write_text(dir / "samples" / (s.id + ".json"), sidecar(s).dump(2) + "\n");
    }
  write_text(dir / "index.json", index.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto index = read_json(dir / "index.json");
  if (index.value("format", "") != "semrel.dataset" || index.value("version", 0) != 1)
    throw std::runtime_error(dir.string() + " is not a version-1 semrel dataset");
  Dataset ds;
  ds.spec = index.at("spec").get<DatasetSpec>();
  for (const auto& id : index.at("train")) ds.train.push_back(load_sample(dir, id.get<std::string>()));
  for (const auto& id : index.at("eval")) ds.eval.push_back(load_sample(dir, id.get<std::string>()));
  return ds;
}

}  // namespace semrel
