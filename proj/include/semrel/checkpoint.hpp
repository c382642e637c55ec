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
#include <string>
#include <type_traits>
#include <vector>

#include "semrel/config.hpp"
#include "semrel/container.hpp"
#include "semrel/model.hpp"

namespace semrel {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[] = "SRCKPT01";

struct CheckpointMeta {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  // Training reached shift_epoch, so evaluation runs with M updates active.
  bool shift_passed = false;
  TrainConfig train;
};

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, double> ? "f64" : "f32";
}

// Container manifest: format, version, dtype, model config, train config,
// epoch, seed, shift_passed, and one {name, shape, offset, nbytes} entry per
// parameter in ModelParams::parameters() order. Blobs use the model's dtype.
template <typename T>
void save_checkpoint(const ModelParams<T>& params, const CheckpointMeta& meta, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format"] = "semrel.checkpoint";
  manifest["version"] = kCheckpointFormatVersion;
  manifest["dtype"] = dtype_name<T>();
  manifest["model"] = params.cfg;
  manifest["train"] = meta.train;
  manifest["epoch"] = meta.epoch;
  manifest["seed"] = meta.seed;
  manifest["shift_passed"] = meta.shift_passed;
  std::vector<std::uint8_t> payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* prm : params.parameters()) {
    const std::uint64_t offset = payload.size();
    for (T v : prm->value().data()) {
      if constexpr (std::is_same_v<T, double>)
        append_f64(payload, v);
      else
        append_f32(payload, v);
    }
    tensors.push_back(
        {{"name", prm->name()}, {"shape", prm->shape().dims()}, {"offset", offset}, {"nbytes", payload.size() - offset}});
  }
  manifest["tensors"] = std::move(tensors);
  write_container(path, std::string_view(kCheckpointMagic, 8), manifest, payload);
}

struct CheckpointHeader {
  std::string dtype;
  ModelConfig model;
  CheckpointMeta meta;
};

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path, nlohmann::json* manifest_out = nullptr,
                                               std::uint64_t* payload_size = nullptr) {
  const auto manifest = read_manifest(path, std::string_view(kCheckpointMagic, 8), payload_size);
  CheckpointHeader h;
  try {
    if (manifest.at("version").get<int>() != kCheckpointFormatVersion)
      throw FormatError(FormatErrc::version_mismatch,
                        path.string() + ": checkpoint version " + manifest.at("version").dump());
    h.dtype = manifest.at("dtype").get<std::string>();
    if (h.dtype != "f32" && h.dtype != "f64")
      throw FormatError(FormatErrc::malformed_manifest, path.string() + ": unknown dtype " + h.dtype);
    h.model = manifest.at("model").get<ModelConfig>();
    h.meta.train = manifest.at("train").get<TrainConfig>();
    h.meta.epoch = manifest.at("epoch").get<std::size_t>();
    h.meta.seed = manifest.at("seed").get<std::uint64_t>();
    h.meta.shift_passed = manifest.at("shift_passed").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_manifest, path.string() + ": " + e.what());
  }
  if (manifest_out) *manifest_out = manifest;
  return h;
}

template <typename T>
struct LoadedCheckpoint {
  ModelParams<T> params;
  CheckpointMeta meta;
};

// Refuses (FormatError) on version, dtype width, name, shape or length
// mismatch; no partially filled model escapes.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json manifest;
  std::uint64_t payload_size = 0;
  const CheckpointHeader h = read_checkpoint_header(path, &manifest, &payload_size);
  if (h.dtype != dtype_name<T>())
    throw FormatError(FormatErrc::shape_inconsistent,
                      path.string() + ": checkpoint dtype " + h.dtype + " loaded as " + dtype_name<T>());
  LoadedCheckpoint<T> out{ModelParams<T>::init(h.model, 0), h.meta};
  auto params = out.params.parameters();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw FormatError(FormatErrc::shape_inconsistent, path.string() + ": tensor count does not match model config");
  std::vector<BlobRange> blobs;
  std::vector<std::uint64_t> expected;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& e = tensors[k];
    if (e.at("name").get<std::string>() != params[k]->name() ||
        e.at("shape").get<std::vector<std::size_t>>() != params[k]->shape().dims())
      throw FormatError(FormatErrc::shape_inconsistent,
                        path.string() + ": tensor " + std::to_string(k) + " does not match model layout");
    blobs.push_back({e.at("offset").get<std::uint64_t>(), e.at("nbytes").get<std::uint64_t>()});
    expected.push_back(params[k]->numel() * sizeof(T));
  }
  validate_blob_layout(blobs, expected, payload_size);
  const auto payload = read_payload(path);
  if (payload.size() != payload_size)
    throw FormatError(FormatErrc::truncated, path.string() + ": payload changed while reading");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value();
    const std::uint8_t* p = payload.data() + blobs[k].offset;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      if constexpr (std::is_same_v<T, double>)
        value[i] = load_f64(p + 8 * i);
      else
        value[i] = load_f32(p + 4 * i);
    }
  }
  out.params.apply_trainable_split();
  return out;
}

// Evaluation mode a checkpoint replays.
inline ForwardOptions eval_options(const CheckpointMeta& meta) {
  return {meta.train.attention, meta.shift_passed, meta.train.delta, meta.train.lambda_decay, false};
}

}  // namespace semrel
