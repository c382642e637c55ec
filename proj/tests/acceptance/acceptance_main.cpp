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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include "semrel/checkpoint.hpp"
#include "semrel/features.hpp"
#include "semrel/harness.hpp"
#include "semrel/inheritable_attention.hpp"
#include "semrel/saliency.hpp"
#include "semrel/srproj.hpp"
#include "support.hpp"

using namespace semrel;
using semrel::test::TempDir;
using semrel::test::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

template <typename... A>
std::string strf(const char* fmt, A... args) {
  const int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::snprintf(out.data(), out.size() + 1, fmt, args...);
  return out;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Shared across criteria: the default training run (C6) feeds C10.
struct Shared {
  TempDir root{"acceptance"};
  std::filesystem::path default_run;
};

// Randomized W2 and small noise so the vision path reaches the logits.
template <typename T>
ModelParams<T> lively(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = ModelParams<T>::init(cfg, seed);
  SplitMix64 rng(seed + 1);
  for (auto& pr : p.projectors)
    for (auto& v : pr.w2.value().storage()) v = static_cast<T>(rng.normal(0.0, 0.5));
  return p;
}

ModelConfig default_model(const Dataset& ds) { return resolve_model(ModelConfig{}, ds); }

Outcome c1_gradcheck() {
  const auto t0 = Clock::now();
  const auto s = cmd_gradcheck();
  const double t = seconds_since(t0);
  double worst = 0.0;
  for (const auto& e : s.entries) worst = std::max(worst, e.report.max_rel_error);
  return {s.passed() && t < 60.0,
          strf("%zu checks, worst relative error %.2e (limit %.0e), %.2fs", s.entries.size(), worst,
                      s.tolerance, t)};
}

Outcome c2_inactivity() {
  DatasetSpec spec;
  spec.n_train = 0;
  spec.n_eval = 100;
  const auto ds = generate_dataset(spec);
  const auto p = lively<double>(default_model(ds), 2);
  double worst = 0.0;
  for (const auto& s : ds.eval) {
    const auto tokens = make_sequence(s).tokens;
    const ForwardOptions base{CrossAttentionKind::baseline, true, 0.3, 0.85, false};
    const ForwardOptions zero{CrossAttentionKind::inheritable, true, 0.0, 0.85, false};
    const ForwardOptions pre{CrossAttentionKind::inheritable, false, 0.3, 0.85, false};
    const auto ref = model_forward(tokens, s.features, p, base).logits.value();
    worst = std::max(worst, test::max_abs_diff(ref, model_forward(tokens, s.features, p, zero).logits.value()));
    worst = std::max(worst, test::max_abs_diff(ref, model_forward(tokens, s.features, p, pre).logits.value()));
  }
  return {worst <= 1e-12, strf("100 samples at f64, max |logit diff| %.3e", worst)};
}

Outcome c3_reduction() {
  SplitMix64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(16), d1 = 2 + rng.below(32), dh = 1 + rng.below(16), d2 = 1 + rng.below(32);
    SRProjParams<float> p;
    p.w1 = Parameter<float>("w1", random_tensor<float>(d1, dh, rng, 1.0 / std::sqrt(static_cast<double>(d1))));
    p.w2 = Parameter<float>("w2", random_tensor<float>(dh, d2, rng, 1.0 / std::sqrt(static_cast<double>(dh))));
    const float c = static_cast<float>(rng.uniform(-2.0, 2.0));
    p.lambda = Parameter<float>("lambda", Tensor<float>::matrix(1, dh, c));
    const Var<float> x(random_tensor<float>(n, d1, rng));
    worst = std::max(worst, test::max_abs_diff(srproj(x, p).value(), proj_baseline(x, p, c).value()));
  }
  return {worst <= 1e-6, strf("1000 float32 cases, max abs diff %.3e", worst)};
}

Outcome c4_mask_invariants() {
  DatasetSpec spec;
  spec.n_train = 0;
  spec.n_eval = 1000;
  const auto ds = generate_dataset(spec);
  auto cfg = default_model(ds);
  cfg.n_layers = 4;
  const auto p = lively<float>(cfg, 4);
  const double delta = 0.3, lambda = 0.85;
  const ForwardOptions opt{CrossAttentionKind::inheritable, true, delta, lambda, true};
  const std::size_t nv = cfg.n_vision();
  const auto k = static_cast<std::size_t>(std::floor(delta * static_cast<double>(nv) + 1e-9));
  std::size_t lattice = 0, count = 0, monotone = 0;
  for (const auto& s : ds.eval) {
    const auto fwd = model_forward(make_sequence(s).tokens, s.features, p, opt);
    for (std::size_t l = 0; l < fwd.mask_snapshots.size(); ++l) {
      const auto& m = fwd.mask_snapshots[l];
      for (std::size_t i = 0; i < m.rows(); ++i) {
        std::size_t decayed = 0;
        for (std::size_t j = 0; j < nv; ++j) {
          const float v = m(i, j), before = l == 0 ? 1.0f : fwd.mask_snapshots[l - 1](i, j);
          monotone += v > before;
          decayed += v < before;
          bool on = false;
          float point = 1.0f;
          for (std::size_t e = 0; e <= l + 1; ++e, point *= static_cast<float>(lambda)) on |= v == point;
          lattice += !on;
        }
        count += decayed != k;
      }
    }
  }
  return {lattice + count + monotone == 0,
          strf("1000 passes, L=4, k=%zu: violations lattice %zu count %zu monotone %zu", k, lattice, count, monotone)};
}

Outcome c5_worked_example() {
  const auto row = Tensor<double>::from_rows({{0.1, 0.5, -0.2, 0.9}});
  auto st = reset_state<double>(1, 4, 0.3, 0.85, true);
  update_mask(st, row);
  const bool one = st.m == Tensor<double>::from_rows({{1, 1, 0.85, 1}});
  update_mask(st, row);
  const bool two = st.m == Tensor<double>::from_rows({{1, 1, 0.85 * 0.85, 1}});
  auto f = reset_state<float>(1, 4, 0.3, 0.85, true);
  update_mask(f, row.cast<float>());
  update_mask(f, row.cast<float>());
  const bool literal = f.m == Tensor<float>::from_rows({{1.0f, 1.0f, 0.7225f, 1.0f}});
  auto half = reset_state<double>(1, 4, 0.5, 0.85, true);
  update_mask(half, row);
  const bool wide = half.m == Tensor<double>::from_rows({{0.85, 1, 0.85, 1}});
  return {one && two && literal && wide,
          strf("step1 %d step2 %d float32 literal 0.7225 %d delta 0.5 %d", one, two, literal, wide)};
}

Outcome c6_default_training(Shared& sh) {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.out_dir = (sh.root / "default").string();
  const auto res = cmd_train(cfg);
  sh.default_run = res.run_dir;
  const auto ds = obtain_dataset(cfg);
  const auto last = res.run_dir / "checkpoints" / strf("epoch_%03zu.ckpt", cfg.train.epochs);
  const auto tr = cmd_eval(last, ds, "train", {});
  const auto ev = cmd_eval(last, ds, "eval", {});
  const double t = seconds_since(t0);
  return {tr.accuracy >= 0.99 && ev.accuracy >= 0.65 && t < 900.0,
          strf("train acc %.4f (>=0.99), eval acc %.4f (>=0.65), %.1fs", tr.accuracy, ev.accuracy, t)};
}

Outcome c7_fusion_beats_final(Shared& sh) {
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig cfg;
    cfg.train.seed = seed;
    cfg.out_dir = (sh.root / strf("fusion_seed%llu", static_cast<unsigned long long>(seed))).string();
    cfg.ablation.fusion_modes = {"average", "none"};
    cfg.ablation.controls = false;
    const auto rows = cmd_ablate(cfg);
    const double fused = rows.at(0).eval_accuracy, final_only = rows.at(1).eval_accuracy;
    const bool ok = rows[0].status == "ok" && rows[1].status == "ok" && fused > final_only;
    wins += ok;
    detail += strf(" s%llu %.3f/%.3f", static_cast<unsigned long long>(seed), fused, final_only);
  }
  return {wins == 5, strf("average{24,12} vs final-only, %zu/5 wins:%s", wins, detail.c_str())};
}

Outcome c8_ablation_grid(Shared& sh) {
  RunConfig cfg;
  cfg.out_dir = (sh.root / "grid").string();
  cfg.ablation.deltas = {0.1, 0.2, 0.3, 0.4};
  cfg.ablation.lambdas = {0.80, 0.85, 0.90, 0.95};
  const auto rows = cmd_ablate(cfg);
  std::size_t grid = 0, failed = 0;
  const AblationRow* control = nullptr;
  const AblationRow* baseline = nullptr;
  for (const auto& r : rows) {
    grid += r.kind == "grid";
    failed += r.status != "ok";
    if (r.kind == "control") control = &r;
    if (r.kind == "baseline") baseline = &r;
  }
  std::ifstream csv(std::filesystem::path(cfg.out_dir) / "ablation.csv");
  std::size_t csv_lines = 0;
  for (std::string line; std::getline(csv, line);) ++csv_lines;
  const bool same = control && baseline && control->eval_accuracy == baseline->eval_accuracy &&
                    control->eval_loss == baseline->eval_loss;
  return {grid == 16 && failed == 0 && csv_lines == 1 + rows.size() && same,
          strf("%zu grid rows, %zu failed, csv rows %zu, control acc %.4f baseline acc %.4f", grid, failed,
                      csv_lines - 1, control ? control->eval_accuracy : -1.0,
                      baseline ? baseline->eval_accuracy : -1.0)};
}

MultilevelFeatures random_features(SplitMix64& rng) {
  MultilevelFeatures f;
  f.n_patches = 1 + rng.below(20);
  f.d1 = 1 + rng.below(40);
  f.producer_seed = rng.next();
  const std::size_t n_layers = 1 + rng.below(4);
  while (f.layers.size() < n_layers) {
    auto t = Tensor<float>::matrix(f.n_patches, f.d1);
    for (auto& v : t.storage()) {
      const auto bits = static_cast<std::uint32_t>(rng.next());
      std::memcpy(&v, &bits, 4);
      if (std::isnan(v)) v = static_cast<float>(rng.normal());
    }
    f.layers.emplace(static_cast<int>(rng.below(25)), std::move(t));
  }
  return f;
}

bool same_bits(const MultilevelFeatures& a, const MultilevelFeatures& b) {
  if (a.n_patches != b.n_patches || a.d1 != b.d1 || a.producer_seed != b.producer_seed ||
      a.layers.size() != b.layers.size())
    return false;
  for (const auto& [k, t] : a.layers)
    if (!b.has(k) || std::memcmp(t.data().data(), b.layer(k).data().data(), t.numel() * 4) != 0) return false;
  return true;
}

template <typename F>
FormatErrc error_code(F&& read) {
  try {
    read();
  } catch (const FormatError& e) {
    return e.code();
  }
  return FormatErrc::io_failure;
}

Outcome c9_round_trips(Shared& sh) {
  const auto dir = sh.root / "io";
  std::filesystem::create_directories(dir);
  SplitMix64 rng(9);
  std::size_t feat_bad = 0, ckpt_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const auto f = random_features(rng);
    write_features(f, dir / "a.feat");
    const auto g = read_features(dir / "a.feat");
    write_features(g, dir / "b.feat");
    feat_bad += !same_bits(f, g) || test::slurp(dir / "a.feat") != test::slurp(dir / "b.feat");

    ModelConfig cfg;
    cfg.vocab = 8 + rng.below(24);
    cfg.d_model = 4 + rng.below(12);
    cfg.n_layers = 1 + rng.below(4);
    cfg.ffn_mult = 1 + rng.below(3);
    cfg.max_seq = 4 + rng.below(8);
    cfg.d1 = 2 + rng.below(10);
    cfg.d_hidden = 1 + rng.below(std::min(cfg.d1, cfg.d_model) - 1);
    cfg.n_patches = 1 + rng.below(9);
    cfg.peft = rng.below(2) == 1;
    const auto p = lively<float>(cfg, rng.next());
    const CheckpointMeta meta{rng.below(50), rng.next(), rng.below(2) == 1, TrainConfig{}};
    save_checkpoint(p, meta, dir / "a.ckpt");
    const auto back = load_checkpoint<float>(dir / "a.ckpt");
    save_checkpoint(back.params, back.meta, dir / "b.ckpt");
    bool equal = test::slurp(dir / "a.ckpt") == test::slurp(dir / "b.ckpt");
    const auto pa = p.parameters(), pb = back.params.parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) equal &= pa[k]->value() == pb[k]->value();
    ckpt_bad += !equal;
  }

  // Fixtures: a truncated file and a future version of each format.
  auto bytes = test::slurp(dir / "a.feat");
  bytes.resize(bytes.size() - 1);
  test::spit(dir / "t.feat", bytes);
  auto manifest = read_manifest(dir / "a.feat", "SRFEAT01");
  manifest["version"] = 2;
  write_container(dir / "v.feat", "SRFEAT01", manifest, read_payload(dir / "a.feat"));
  bytes = test::slurp(dir / "a.ckpt");
  bytes.resize(bytes.size() - 1);
  test::spit(dir / "t.ckpt", bytes);
  manifest = read_manifest(dir / "a.ckpt", "SRCKPT01");
  manifest["version"] = 2;
  write_container(dir / "v.ckpt", "SRCKPT01", manifest, read_payload(dir / "a.ckpt"));
  const bool fixtures =
      error_code([&] { read_features(dir / "t.feat"); }) == FormatErrc::truncated &&
      error_code([&] { read_features(dir / "v.feat"); }) == FormatErrc::version_mismatch &&
      error_code([&] { load_checkpoint<float>(dir / "t.ckpt"); }) == FormatErrc::truncated &&
      error_code([&] { load_checkpoint<float>(dir / "v.ckpt"); }) == FormatErrc::version_mismatch;
  return {feat_bad == 0 && ckpt_bad == 0 && fixtures,
          strf("100 feature and 100 checkpoint round trips, mismatches %zu/%zu, truncation and version fixtures %s",
                      feat_bad, ckpt_bad, fixtures ? "rejected" : "NOT rejected")};
}

Outcome c10_exports(Shared& sh) {
  if (sh.default_run.empty()) return {false, "needs the default training run"};
  RunConfig cfg;
  const auto ds = obtain_dataset(cfg);
  const auto ckpt = sh.default_run / "checkpoints" / strf("epoch_%03zu.ckpt", cfg.train.epochs);
  const auto attn = cmd_export_attn(ckpt, ds.eval.at(0), sh.root / "attn");
  bool floors = true, varied = true;
  for (std::size_t l = 0; l < attn.layer_minima.size(); ++l)
    floors &= attn.layer_minima[l] >= std::pow(cfg.train.lambda_decay, static_cast<double>(l + 1)) - 1e-6;
  for (const auto& pgm : attn.pgm_files) {
    const auto bytes = test::slurp(pgm);
    const std::size_t pixels = cfg.model.n_vision() * make_sequence(ds.eval.at(0)).tokens.size();
    std::set<char> levels(bytes.end() - static_cast<std::ptrdiff_t>(pixels), bytes.end());
    varied &= levels.size() > 1;
  }

  // Relation pair at opposite grid corners so the relation region spans the image.
  auto scene = cfg.data.scene;
  scene.fixed_pair = std::pair<std::size_t, std::size_t>{0, scene.n_patches - 1};
  const auto sample = generate_synthetic_scene(2026, scene);
  const auto sal = cmd_export_saliency(ckpt, sample, sh.root / "saliency", cfg.exports.top_k);
  double h_final = -1.0, h_mid = -1.0;
  for (const auto& m : sal.maps) {
    if (m.projector != "own") continue;
    if (m.source_layer == scene.encoder_depth) h_final = m.entropy;
    if (m.source_layer == scene.intermediate_layer_index) h_mid = m.entropy;
  }
  return {floors && varied && h_mid > h_final,
          strf("%zu layers non-uniform %d floors %d; saliency entropy intermediate %.4f > final %.4f",
                      attn.pgm_files.size(), varied, floors, h_mid, h_final)};
}

}  // namespace

int main() {
  Shared sh;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"C1 gradcheck", c1_gradcheck},
      {"C2 inactivity equivalence", c2_inactivity},
      {"C3 Lambda reduction", c3_reduction},
      {"C4 mask invariants", c4_mask_invariants},
      {"C5 update worked example", c5_worked_example},
      {"C6 default training", [&] { return c6_default_training(sh); }},
      {"C7 multi-layer fusion", [&] { return c7_fusion_beats_final(sh); }},
      {"C8 ablation grid", [&] { return c8_ablation_grid(sh); }},
      {"C9 format round trips", [&] { return c9_round_trips(sh); }},
      {"C10 attention and saliency exports", [&] { return c10_exports(sh); }},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "acceptance PASSED" : strf("acceptance FAILED: %d criteria", failures))
            << std::endl;
  return failures == 0 ? 0 : 1;
}
