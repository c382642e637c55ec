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

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "semrel/checkpoint.hpp"
#include "semrel/harness.hpp"

namespace {

using namespace semrel;

// Flags shared by every command that reads a RunConfig. Unset flags leave the
// file (or default) value alone.
struct Overrides {
  std::string config;
  std::optional<std::string> dataset, out, precision, fusion, attention;
  std::optional<std::size_t> epochs, batch_size, shift_epoch, n_train, n_eval;
  std::optional<double> lr, momentum, delta, lambda_decay;
  std::optional<std::uint64_t> seed, data_seed;
  bool peft = false;

  void attach(CLI::App* app, bool training) {
    app->add_option("-c,--config", config, "RunConfig JSON file");
    app->add_option("--dataset", dataset, "dataset directory written by gen");
    app->add_option("--n-train", n_train, "training samples when generating in memory");
    app->add_option("--n-eval", n_eval, "evaluation samples when generating in memory");
    app->add_option("--data-seed", data_seed, "generator seed when generating in memory");
    if (!training) return;
    app->add_option("-o,--out", out, "output directory");
    app->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--momentum", momentum);
    app->add_option("--delta", delta);
    app->add_option("--lambda", lambda_decay);
    app->add_option("--shift-epoch", shift_epoch);
    app->add_option("--seed", seed, "training seed (RUN_SEED overrides the file, this flag overrides both)");
    app->add_option("--fusion", fusion, "average | weighted-average | add | concat");
    app->add_option("--attention", attention, "inheritable | baseline");
    app->add_flag("--peft", peft, "train only projectors and cross-attention positions");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    apply_env_overrides(cfg);
    if (dataset) cfg.dataset = *dataset;
    if (n_train) cfg.data.n_train = *n_train;
    if (n_eval) cfg.data.n_eval = *n_eval;
    if (data_seed) cfg.data.seed = *data_seed;
    if (out) cfg.out_dir = *out;
    if (precision) cfg.precision = *precision;
    if (epochs) cfg.train.epochs = *epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (lr) cfg.train.lr = *lr;
    if (momentum) cfg.train.momentum = *momentum;
    if (delta) cfg.train.delta = *delta;
    if (lambda_decay) cfg.train.lambda_decay = *lambda_decay;
    if (shift_epoch) cfg.train.shift_epoch = *shift_epoch;
    if (seed) cfg.train.seed = *seed;
    if (fusion) {
      cfg.model.fusion.mode = parse_fusion_mode(*fusion);
      if (cfg.model.fusion.mode == FusionMode::weighted_average && cfg.model.fusion.weights.empty())
        cfg.model.fusion.weights.assign(cfg.model.fusion.layers.size(),
                                        1.0 / static_cast<double>(cfg.model.fusion.layers.size()));
    }
    if (attention) cfg.train.attention = parse_cross_attention(*attention);
    if (peft) cfg.model.peft = true;
    return cfg;
  }
};

struct SampleChoice {
  std::string split = "eval";
  std::size_t index = 0;

  void attach(CLI::App* app) {
    app->add_option("--split", split)->check(CLI::IsMember({"train", "eval"}));
    app->add_option("--index", index, "sample index within the split");
  }
  const SyntheticSample& pick(const Dataset& ds) const {
    const auto& v = split == "train" ? ds.train : ds.eval;
    if (index >= v.size()) throw UsageError("sample index " + std::to_string(index) + " out of range");
    return v[index];
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semrel: multilevel projection and inheritable cross-attention on synthetic scenes"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset on disk");
  Overrides gen_ov;
  std::string gen_out;
  bool force = false;
  std::optional<double> amplitude;
  std::optional<std::size_t> n_relations;
  gen_ov.attach(gen, false);
  gen->add_option("-o,--out", gen_out, "dataset directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty directory");
  gen->add_option("--relation-amplitude", amplitude);
  gen->add_option("--n-relations", n_relations);

  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  Overrides train_ov;
  train_ov.attach(train, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  Overrides eval_ov;
  std::string ckpt, eval_out, active;
  SampleChoice eval_split;
  eval_ov.attach(eval, false);
  eval->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split.split)->check(CLI::IsMember({"train", "eval"}));
  eval->add_option("-o,--out", eval_out, "metrics JSON file");
  eval->add_option("--active", active, "force M updates: on | off | checkpoint")
      ->check(CLI::IsMember({"on", "off", "checkpoint"}));

  auto* ablate = app.add_subcommand("ablate", "train one model per grid point and write ablation.csv");
  Overrides ablate_ov;
  std::vector<double> deltas, lambdas;
  std::vector<std::size_t> shifts;
  std::vector<std::string> modes;
  std::vector<int> sources;
  std::optional<std::size_t> jobs;
  bool no_controls = false;
  ablate_ov.attach(ablate, true);
  ablate->add_option("--deltas", deltas)->delimiter(',');
  ablate->add_option("--lambdas", lambdas)->delimiter(',');
  ablate->add_option("--shift-epochs", shifts)->delimiter(',');
  ablate->add_option("--fusion-modes", modes, "average,add,concat,none,weighted-average:<w_final>:<w_source>")
      ->delimiter(',');
  ablate->add_option("--layer-sources", sources)->delimiter(',');
  ablate->add_option("-j,--jobs", jobs);
  ablate->add_flag("--no-controls", no_controls, "skip the delta = 0 and baseline rows");

  auto* attn = app.add_subcommand("export-attn", "write per-layer M heatmaps for one sample");
  Overrides attn_ov;
  std::string attn_ckpt, attn_out;
  SampleChoice attn_sample;
  attn_ov.attach(attn, false);
  attn_sample.attach(attn);
  attn->add_option("--checkpoint", attn_ckpt)->required()->check(CLI::ExistingFile);
  attn->add_option("-o,--out", attn_out)->required();

  auto* sal = app.add_subcommand("export-saliency", "write projector saliency and Lambda-dimension maps");
  Overrides sal_ov;
  std::string sal_ckpt, sal_out;
  SampleChoice sal_sample;
  std::size_t top_k = 2;
  sal_ov.attach(sal, false);
  sal_sample.attach(sal);
  sal->add_option("--checkpoint", sal_ckpt)->required()->check(CLI::ExistingFile);
  sal->add_option("-o,--out", sal_out)->required();
  sal->add_option("--top-k", top_k);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and the tiny model");
  std::string fault;
  grad->add_option("--fault", fault)->check(CLI::IsMember({"silu-derivative"}))->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = gen_ov.resolve();
      if (amplitude) cfg.data.scene.relation_amplitude = *amplitude;
      if (n_relations) cfg.data.scene.n_relations = *n_relations;
      cmd_gen(cfg.data, gen_out, force);
      std::printf("wrote %zu train and %zu eval samples to %s\n", cfg.data.n_train, cfg.data.n_eval, gen_out.c_str());
    } else if (*train) {
      const RunConfig cfg = train_ov.resolve();
      const auto res = cmd_train(cfg);
      for (const auto& r : res.records)
        std::printf("epoch %3zu  lr %.3e  loss %.5f  eval_acc %.4f  eval_loss %.5f  m_sparsity %.4f\n", r.epoch, r.lr,
                    r.train_loss, r.eval_accuracy, r.eval_loss, r.m_sparsity);
      std::printf("run directory: %s\n", res.run_dir.c_str());
    } else if (*eval) {
      const RunConfig cfg = eval_ov.resolve();
      EvalOverrides ov;
      if (active == "on") ov.active = true;
      if (active == "off") ov.active = false;
      const auto m = cmd_eval(ckpt, obtain_dataset(cfg), eval_split.split, eval_out, ov);
      std::printf("accuracy %.6f  mean_loss %.6f  samples %zu\n", m.accuracy, m.mean_loss, m.samples);
    } else if (*ablate) {
      RunConfig cfg = ablate_ov.resolve();
      if (!deltas.empty()) cfg.ablation.deltas = deltas;
      if (!lambdas.empty()) cfg.ablation.lambdas = lambdas;
      if (!shifts.empty()) cfg.ablation.shift_epochs = shifts;
      if (!modes.empty()) cfg.ablation.fusion_modes = modes;
      if (!sources.empty()) cfg.ablation.layer_sources = sources;
      if (jobs) cfg.ablation.jobs = *jobs;
      if (no_controls) cfg.ablation.controls = false;
      const auto rows = cmd_ablate(cfg);
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.status != "ok";
      std::printf("%zu rows (%zu failed) written to %s/ablation.csv\n", rows.size(), failed, cfg.out_dir.c_str());
      return failed ? 1 : 0;
    } else if (*attn) {
      const Dataset ds = obtain_dataset(attn_ov.resolve());
      const auto ex = cmd_export_attn(attn_ckpt, attn_sample.pick(ds), attn_out);
      for (std::size_t l = 0; l < ex.layer_minima.size(); ++l)
        std::printf("layer %zu  min(M) %.6f  %s\n", l + 1, ex.layer_minima[l], ex.pgm_files[l].c_str());
    } else if (*sal) {
      const Dataset ds = obtain_dataset(sal_ov.resolve());
      const auto ex = cmd_export_saliency(sal_ckpt, sal_sample.pick(ds), sal_out, top_k);
      for (const auto& m : ex.maps)
        std::printf("layer %3d  projector %-3s  entropy %.6f\n", m.source_layer, m.projector.c_str(), m.entropy);
      std::printf("summary: %s\n", ex.summary.c_str());
    } else if (*grad) {
      const auto summary = cmd_gradcheck(fault == "silu-derivative");
      std::cout << format_gradcheck(summary);
      return summary.passed() ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
