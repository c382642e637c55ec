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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semrel/config.hpp"
#include "semrel/dataset.hpp"
#include "semrel/gradcheck.hpp"
#include "semrel/train.hpp"

namespace semrel {

struct AblationGrid {
  std::vector<double> deltas;
  std::vector<double> lambdas;
  std::vector<std::size_t> shift_epochs;
  // "average", "add", "concat", "none" (final layer only) or
  // "weighted-average:<w_final>:<w_source>".
  std::vector<std::string> fusion_modes;
  // Encoder layer fused with the final layer; empty means the model default.
  std::vector<int> layer_sources;
  // Adds a delta = 0 control row and an unmasked-baseline row.
  bool controls = true;
  std::size_t jobs = 1;
};

struct ExportConfig {
  std::string split = "eval";
  std::size_t sample_index = 0;
  std::size_t top_k = 2;
};

struct RunConfig {
  std::string dataset;  // directory; empty means generate `data` in memory
  DatasetSpec data;
  ModelConfig model;
  TrainConfig train;
  std::string precision = "f32";  // "f32" | "f64"
  std::string out_dir = "run";
  AblationGrid ablation;
  ExportConfig exports;
};

void to_json(nlohmann::json& j, const AblationGrid& g);
void from_json(const nlohmann::json& j, AblationGrid& g);
void to_json(nlohmann::json& j, const ExportConfig& e);
void from_json(const nlohmann::json& j, ExportConfig& e);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

// RUN_SEED, when set, replaces train.seed.
void apply_env_overrides(RunConfig& cfg);

// Loads cfg.dataset, or generates cfg.data in memory when no path is given.
Dataset obtain_dataset(const RunConfig& cfg);

// Aligns model extents with the dataset (vocab, d1, patch count).
ModelConfig resolve_model(const ModelConfig& model, const Dataset& ds);

// ---------------------------------------------------------------------------

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Refuses an existing non-empty directory unless `force`.
void cmd_gen(const DatasetSpec& spec, const std::filesystem::path& out_dir, bool force);

struct TrainRunResult {
  std::vector<EpochRecord> records;
  std::filesystem::path run_dir;
};

// Writes <out>/config.json (resolved), <out>/metrics.jsonl (one record per
// epoch) and <out>/checkpoints/epoch_NNN.ckpt for epochs 0..E.
TrainRunResult cmd_train(const RunConfig& cfg);

struct EvalOverrides {
  std::optional<bool> active;  // force M updates on or off
};

// Evaluates `checkpoint` on a dataset split; writes the metrics JSON to
// `out_file` when non-empty.
EvalMetrics cmd_eval(const std::filesystem::path& checkpoint, const Dataset& dataset, const std::string& split,
                     const std::filesystem::path& out_file, const EvalOverrides& overrides = {});

struct AblationRow {
  std::string kind;  // "grid" | "control" | "baseline"
  double delta = 0.0;
  double lambda_decay = 0.0;
  std::size_t shift_epoch = 0;
  std::string fusion_mode;
  int layer_source = 0;
  double eval_accuracy = 0.0;
  double eval_loss = 0.0;
  double final_train_loss = 0.0;
  double wall_time_s = 0.0;
  std::string status = "ok";
  std::string error;
};

// Column order of ablation.csv.
inline constexpr const char* kAblationCsvHeader =
    "kind,delta,lambda_decay,shift_epoch,fusion_mode,layer_source,eval_accuracy,eval_loss,final_train_loss,"
    "wall_time_s,status,error";

// One training run per grid point; rows sorted by (delta, lambda_decay,
// shift_epoch, fusion_mode, layer_source), then the control rows. Writes
// <out>/ablation.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);

struct AttnExport {
  std::vector<std::filesystem::path> csv_files;
  std::vector<std::filesystem::path> pgm_files;
  std::filesystem::path token_file;
  std::vector<double> layer_minima;
};

// One forward pass with snapshots: <out>/mask_layer<l>.csv and .pgm per LM
// layer plus <out>/tokens.csv (layer, text_pos, token, vision_idx, m, alpha).
AttnExport cmd_export_attn(const std::filesystem::path& checkpoint, const SyntheticSample& sample,
                           const std::filesystem::path& out_dir);

struct SaliencyMap {
  int source_layer = 0;
  std::string projector;  // "own" or "ref"
  std::vector<double> values;
  double entropy = 0.0;
};

struct SaliencyExport {
  std::vector<SaliencyMap> maps;
  std::vector<std::pair<std::size_t, double>> lambda_dims;  // (dim, lambda) exported per projector
  std::filesystem::path summary;
};

// Patch saliency of each source layer under its own projector ("own") and
// under the final-layer projector ("ref"), plus hidden-activation maps for
// the top_k largest and smallest Lambda entries of each projector. Writes
// CSVs and <out>/saliency.json.
SaliencyExport cmd_export_saliency(const std::filesystem::path& checkpoint, const SyntheticSample& sample,
                                   const std::filesystem::path& out_dir, std::size_t top_k);

struct GradcheckEntry {
  std::string name;
  GradcheckReport report;
};

struct GradcheckSummary {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-5;
  double seconds = 0.0;
  bool passed() const;
};

// Finite-difference checks of every op in isolation and of the tiny full
// model (d2 = 8, 2 layers, d_h = 4, 4 patches) with M inactive and with M
// active but held fixed. `silu_fault` injects the negative control.
GradcheckSummary cmd_gradcheck(bool silu_fault = false);
// Model configuration used by the model-level checks.
ModelConfig gradcheck_model_config();

std::string format_gradcheck(const GradcheckSummary& s);

}  // namespace semrel
