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

#include "semrel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "semrel/checkpoint.hpp"
#include "semrel/saliency.hpp"

namespace semrel {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
decltype(auto) with_dtype(const std::string& dtype, Fn&& fn) {
  if (dtype == "f64") return fn(double{});
  if (dtype == "f32") return fn(float{});
  throw UsageError("unknown precision " + dtype);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::uint64_t model_seed(const TrainConfig& t) { return derive_seed(t.seed, 7, 0); }

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
  return buf;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void cmd_gen(const DatasetSpec& spec, const fs::path& out_dir, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force) throw UsageError(out_dir.string() + " exists and is not empty; pass --force to overwrite");
    fs::remove_all(out_dir / "samples");
    fs::remove(out_dir / "index.json");
  }
  write_dataset(generate_dataset(spec), out_dir);
}

TrainRunResult cmd_train(const RunConfig& cfg) {
  const Dataset ds = obtain_dataset(cfg);
  RunConfig resolved = cfg;
  resolved.model = resolve_model(cfg.model, ds);
  resolved.train.validate();

  TrainRunResult result;
  result.run_dir = cfg.out_dir;
  fs::create_directories(result.run_dir / "checkpoints");
  open_out(result.run_dir / "config.json") << nlohmann::json(resolved).dump(2) << '\n';

  with_dtype(cfg.precision, [&]<typename T>(T) {
    auto params = ModelParams<T>::init(resolved.model, model_seed(resolved.train));
    auto meta_for = [&](std::size_t epoch) {
      return CheckpointMeta{epoch, resolved.train.seed, resolved.train.active_in_epoch(epoch), resolved.train};
    };
    save_checkpoint(params, meta_for(0), result.run_dir / "checkpoints" / checkpoint_name(0));
    auto metrics = open_out(result.run_dir / "metrics.jsonl");
    const EpochCallback<T> on_epoch = [&](const EpochRecord& rec, const ModelParams<T>& p) {
      metrics << nlohmann::json(rec).dump() << '\n' << std::flush;
      save_checkpoint(p, meta_for(rec.epoch), result.run_dir / "checkpoints" / checkpoint_name(rec.epoch));
    };
    result.records = train_model<T>(params, ds.train, ds.eval, ds.answer_tokens(), resolved.train, on_epoch);
  });
  return result;
}

EvalMetrics cmd_eval(const fs::path& checkpoint, const Dataset& dataset, const std::string& split,
                     const fs::path& out_file, const EvalOverrides& overrides) {
  const std::vector<SyntheticSample>* samples = nullptr;
  if (split == "train")
    samples = &dataset.train;
  else if (split == "eval")
    samples = &dataset.eval;
  else
    throw UsageError("split must be train or eval, got " + split);

  const auto header = read_checkpoint_header(checkpoint);
  ForwardOptions opt = eval_options(header.meta);
  if (overrides.active) opt.active = *overrides.active;
  const EvalMetrics m = with_dtype(header.dtype, [&]<typename T>(T) {
    const auto loaded = load_checkpoint<T>(checkpoint);
    return evaluate<T>(*samples, loaded.params, opt, dataset.answer_tokens());
  });
  if (!out_file.empty()) {
    nlohmann::json j = {{"checkpoint", checkpoint.filename().string()},
                        {"epoch", header.meta.epoch},
                        {"split", split},
                        {"active", opt.active},
                        {"accuracy", m.accuracy},
                        {"mean_loss", m.mean_loss},
                        {"samples", m.samples}};
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    open_out(out_file) << j.dump(2) << '\n';
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

struct AblationPoint {
  AblationRow row;
  ModelConfig model;
  TrainConfig train;
};

FusionSpec fusion_for(const std::string& mode, int final_layer, int source) {
  FusionSpec f;
  f.layers = source == final_layer ? std::vector<int>{final_layer} : std::vector<int>{final_layer, source};
  if (mode == "none") {
    f.layers = {final_layer};
    return f;
  }
  const auto colon = mode.find(':');
  f.mode = parse_fusion_mode(mode.substr(0, colon));
  if (colon != std::string::npos) {
    if (f.mode != FusionMode::weighted_average) throw UsageError("only weighted-average takes weights: " + mode);
    std::stringstream ss(mode.substr(colon + 1));
    for (std::string w; std::getline(ss, w, ':');) f.weights.push_back(std::stod(w));
  } else if (f.mode == FusionMode::weighted_average) {
    f.weights.assign(f.layers.size(), 1.0 / static_cast<double>(f.layers.size()));
  }
  if (f.weights.size() > f.layers.size()) f.weights.resize(f.layers.size());
  return f;
}

std::string clean_field(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == ',' || c == '\n' || c == '\r' || c == '"'; }, ';');
  return s;
}

// Each point owns <out>/runs/<NNN>/ with its resolved config and result.
void run_point(AblationPoint& pt, const Dataset& ds, const RunConfig& base, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string& precision = base.precision;
  try {
    fs::create_directories(dir);
    const ModelConfig model = resolve_model(pt.model, ds);
    RunConfig resolved = base;
    resolved.model = model;
    resolved.train = pt.train;
    resolved.ablation = {};
    resolved.out_dir = dir.string();
    open_out(dir / "config.json") << nlohmann::json(resolved).dump(2) << '\n';
    with_dtype(precision, [&]<typename T>(T) {
      auto params = ModelParams<T>::init(model, model_seed(pt.train));
      const auto records =
          train_model<T>(params, ds.train, std::span<const SyntheticSample>{}, ds.answer_tokens(), pt.train);
      const auto m = evaluate<T>(ds.eval, params, forward_options(pt.train, pt.train.epochs), ds.answer_tokens());
      pt.row.eval_accuracy = m.accuracy;
      pt.row.eval_loss = m.mean_loss;
      pt.row.final_train_loss = records.back().train_loss;
    });
  } catch (const std::exception& e) {
    pt.row.status = "error";
    pt.row.error = clean_field(e.what());
  }
  pt.row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (fs::is_directory(dir)) {
    std::ofstream result(dir / "result.json", std::ios::trunc);
    result << nlohmann::json{{"kind", pt.row.kind},
                             {"eval_accuracy", pt.row.eval_accuracy},
                             {"eval_loss", pt.row.eval_loss},
                             {"final_train_loss", pt.row.final_train_loss},
                             {"status", pt.row.status},
                             {"error", pt.row.error}}
                  .dump(2)
           << '\n';
  }
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
  const auto& g = cfg.ablation;
  const int final_layer = cfg.model.fusion.layers.front();
  const int base_source = cfg.model.fusion.layers.size() > 1 ? cfg.model.fusion.layers[1] : final_layer;

  const auto deltas = g.deltas.empty() ? std::vector<double>{cfg.train.delta} : g.deltas;
  const auto lambdas = g.lambdas.empty() ? std::vector<double>{cfg.train.lambda_decay} : g.lambdas;
  const auto shifts = g.shift_epochs.empty() ? std::vector<std::size_t>{cfg.train.shift_epoch} : g.shift_epochs;
  const auto modes = g.fusion_modes.empty() ? std::vector<std::string>{to_string(cfg.model.fusion.mode)}
                                            : g.fusion_modes;
  const auto sources = g.layer_sources.empty() ? std::vector<int>{base_source} : g.layer_sources;

  RunConfig data_cfg = cfg;
  if (cfg.dataset.empty()) {
    std::set<int> layers(data_cfg.data.scene.layers.begin(), data_cfg.data.scene.layers.end());
    layers.insert(final_layer);
    layers.insert(sources.begin(), sources.end());
    layers.insert(cfg.model.fusion.layers.begin(), cfg.model.fusion.layers.end());
    data_cfg.data.scene.layers.assign(layers.begin(), layers.end());
  }
  const Dataset ds = obtain_dataset(data_cfg);

  std::vector<AblationPoint> points;
  auto make_point = [&](const std::string& kind, double delta, double lambda, std::size_t shift,
                        const std::string& mode, int source) {
    AblationPoint pt;
    pt.row.kind = kind;
    pt.row.delta = delta;
    pt.row.lambda_decay = lambda;
    pt.row.shift_epoch = shift;
    pt.row.fusion_mode = mode;
    pt.row.layer_source = source;
    pt.model = cfg.model;
    pt.train = cfg.train;
    pt.train.delta = delta;
    pt.train.lambda_decay = lambda;
    pt.train.shift_epoch = shift;
    try {
      pt.model.fusion = fusion_for(mode, final_layer, source);
      pt.model.fusion.scale = cfg.model.fusion.scale;
    } catch (const std::exception& e) {
      pt.row.status = "error";
      pt.row.error = clean_field(e.what());
    }
    return pt;
  };
  for (double d : deltas)
    for (double l : lambdas)
      for (std::size_t s : shifts)
        for (const auto& m : modes)
          for (int src : sources) points.push_back(make_point("grid", d, l, s, m, src));
  std::stable_sort(points.begin(), points.end(), [](const AblationPoint& a, const AblationPoint& b) {
    return std::tie(a.row.delta, a.row.lambda_decay, a.row.shift_epoch, a.row.fusion_mode, a.row.layer_source) <
           std::tie(b.row.delta, b.row.lambda_decay, b.row.shift_epoch, b.row.fusion_mode, b.row.layer_source);
  });
  if (g.controls) {
    const std::string base_mode = to_string(cfg.model.fusion.mode);
    points.push_back(make_point("control", 0.0, cfg.train.lambda_decay, cfg.train.shift_epoch, base_mode, base_source));
    auto baseline =
        make_point("baseline", cfg.train.delta, cfg.train.lambda_decay, cfg.train.shift_epoch, base_mode, base_source);
    baseline.train.attention = CrossAttentionKind::baseline;
    points.push_back(std::move(baseline));
    // Keep the base weights for weighted-average controls.
    for (auto* pt : {&points[points.size() - 2], &points.back()})
      if (cfg.model.fusion.mode == FusionMode::weighted_average) pt->model.fusion = cfg.model.fusion;
  }

  const fs::path runs = fs::path(cfg.out_dir) / "runs";
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < points.size();) {
      char name[16];
      std::snprintf(name, sizeof name, "%03zu", i);
      if (points[i].row.status == "ok") run_point(points[i], ds, cfg, runs / name);
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(g.jobs, 1, points.size());
  std::vector<std::jthread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  pool.clear();

  std::vector<AblationRow> rows;
  for (auto& pt : points) rows.push_back(std::move(pt.row));

  fs::create_directories(cfg.out_dir);
  auto out = open_out(fs::path(cfg.out_dir) / "ablation.csv");
  out << kAblationCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.kind << ',' << num(r.delta) << ',' << num(r.lambda_decay) << ',' << r.shift_epoch << ','
        << clean_field(r.fusion_mode) << ',' << r.layer_source << ',' << num(r.eval_accuracy) << ','
        << num(r.eval_loss) << ',' << num(r.final_train_loss) << ',' << num(r.wall_time_s) << ',' << r.status << ','
        << r.error << '\n';
  return rows;
}

// ---------------------------------------------------------------------------
// Exports

AttnExport cmd_export_attn(const fs::path& checkpoint, const SyntheticSample& sample, const fs::path& out_dir) {
  const auto header = read_checkpoint_header(checkpoint);
  fs::create_directories(out_dir);
  AttnExport ex;
  with_dtype(header.dtype, [&]<typename T>(T) {
    const auto loaded = load_checkpoint<T>(checkpoint);
    ForwardOptions opt = eval_options(loaded.meta);
    opt.keep_snapshots = true;
    const auto seq = make_sequence(sample);
    RecordScope off(false);
    const auto fwd = model_forward(seq.tokens, sample.features, loaded.params, opt);

    ex.token_file = out_dir / "tokens.csv";
    auto tokens = open_out(ex.token_file);
    tokens.precision(9);
    tokens << "layer,text_pos,token,vision_idx,m,alpha\n";
    for (std::size_t l = 0; l < fwd.mask_snapshots.size(); ++l) {
      const auto& m = fwd.mask_snapshots[l];
      const auto& alpha = fwd.alpha_snapshots[l];
      const std::string stem = "mask_layer" + std::to_string(l + 1);
      ex.csv_files.push_back(out_dir / (stem + ".csv"));
      ex.pgm_files.push_back(out_dir / (stem + ".pgm"));
      write_mask_csv(m, ex.csv_files.back());
      write_mask_pgm(m, opt.lambda_decay, loaded.params.cfg.n_layers, ex.pgm_files.back());
      double lo = 1.0;
      for (T v : m.data()) lo = std::min(lo, static_cast<double>(v));
      ex.layer_minima.push_back(lo);
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
          tokens << l + 1 << ',' << i << ',' << seq.tokens[i] << ',' << j << ',' << static_cast<double>(m(i, j))
                 << ',' << static_cast<double>(alpha(i, j)) << '\n';
    }
  });
  return ex;
}

namespace {

void write_series(const fs::path& path, const char* column, const std::vector<double>& values) {
  auto out = open_out(path);
  out.precision(9);
  out << "patch," << column << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) out << i << ',' << values[i] << '\n';
}

}  // namespace

SaliencyExport cmd_export_saliency(const fs::path& checkpoint, const SyntheticSample& sample, const fs::path& out_dir,
                                   std::size_t top_k) {
  const auto header = read_checkpoint_header(checkpoint);
  fs::create_directories(out_dir);
  SaliencyExport ex;
  nlohmann::json summary = {{"checkpoint", checkpoint.filename().string()},
                            {"sample", sample.id},
                            {"maps", nlohmann::json::array()},
                            {"lambda_maps", nlohmann::json::array()}};
  with_dtype(header.dtype, [&]<typename T>(T) {
    const auto loaded = load_checkpoint<T>(checkpoint);
    const auto& fusion = loaded.params.cfg.fusion;
    const auto& reference = projector_for(loaded.params.projectors, fusion.layers.front());
    RecordScope off(false);
    for (int layer : fusion.layers) {
      const Var<T> xv(feature_tensor<T>(sample.features, layer));
      const auto& own = projector_for(loaded.params.projectors, layer);
      for (const auto& [label, proj] : {std::pair<std::string, const SRProjParams<T>*>{"own", &own}, {"ref", &reference}}) {
        SaliencyMap map;
        map.source_layer = layer;
        map.projector = label;
        map.values = extract_patch_saliency(srproj(xv, *proj).value());
        map.entropy = saliency_entropy(map.values);
        const std::string file = "saliency_" + label + "_l" + std::to_string(layer) + ".csv";
        write_series(out_dir / file, "saliency", map.values);
        summary["maps"].push_back(
            {{"source_layer", layer}, {"projector", label}, {"entropy", map.entropy}, {"file", file}});
        ex.maps.push_back(std::move(map));
      }
    }
    for (const auto& proj : loaded.params.projectors) {
      const std::size_t dh = proj.d_hidden();
      std::vector<std::size_t> order(dh);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const auto& lam = proj.lambda.value();
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lam[a] > lam[b]; });
      std::vector<std::pair<std::string, std::size_t>> picks;
      for (std::size_t r = 0; r < std::min(top_k, dh); ++r) picks.emplace_back("top", order[r]);
      for (std::size_t r = 0; r < std::min(top_k, dh); ++r)
        if (r + top_k < dh) picks.emplace_back("bottom", order[dh - 1 - r]);
      const Tensor<T> xv = feature_tensor<T>(sample.features, proj.source_layer);
      for (const auto& [rank, dim] : picks) {
        const auto map = hidden_activation_map(xv, proj, dim);
        char lam_buf[32];
        std::snprintf(lam_buf, sizeof lam_buf, "%.4f", map.lambda);
        const std::string file = "hidden_l" + std::to_string(proj.source_layer) + "_" + rank + "_dim" +
                                 std::to_string(dim) + "_lambda" + lam_buf + ".csv";
        write_series(out_dir / file, "activation", map.values);
        ex.lambda_dims.emplace_back(dim, map.lambda);
        summary["lambda_maps"].push_back({{"source_layer", proj.source_layer},
                                          {"rank", rank},
                                          {"dim", dim},
                                          {"lambda", map.lambda},
                                          {"file", file}});
      }
    }
  });
  ex.summary = out_dir / "saliency.json";
  open_out(ex.summary) << summary.dump(2) << '\n';
  return ex;
}

}  // namespace semrel
