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

#include <chrono>
#include <cstdio>
#include <sstream>

#include "semrel/harness.hpp"

namespace semrel {

namespace {

using P = Parameter<double>;
using V = Var<double>;

Tensor<double> random_matrix(std::size_t r, std::size_t c, SplitMix64& rng, double sd = 1.0) {
  Tensor<double> t = Tensor<double>::matrix(r, c);
  for (auto& v : t.storage()) v = rng.normal(0.0, sd);
  return t;
}

// Contracting with a fixed random matrix keeps every output entry relevant.
V probe(const V& out, SplitMix64& rng) {
  return sum(hadamard(out, random_matrix(out.rows(), out.cols(), rng)));
}

struct Suite {
  GradcheckSummary summary;
  std::uint64_t seed = 0x6EADC4EC;

  template <typename Build>
  void op(const std::string& name, std::vector<P> params, Build build) {
    const std::uint64_t probe_seed = derive_seed(seed, summary.entries.size(), 1);
    std::vector<P*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    auto forward = [&] {
      SplitMix64 rng(probe_seed);
      return probe(build(params), rng);
    };
    summary.entries.push_back({name, finite_diff_check(forward, ptrs, 1e-4)});
  }

  P param(const std::string& name, std::size_t r, std::size_t c, double sd = 1.0) {
    SplitMix64 rng(derive_seed(seed, 1000 + counter_++, 0));
    return P(name, random_matrix(r, c, rng, sd));
  }

 private:
  std::uint64_t counter_ = 0;
};

void check_ops(Suite& s) {
  s.op("matmul", {s.param("a", 3, 4), s.param("b", 4, 2)}, [](auto& p) { return matmul(p[0].var(), p[1].var()); });
  s.op("transpose", {s.param("a", 3, 4)}, [](auto& p) { return transpose(p[0].var()); });
  s.op("diag", {s.param("v", 1, 4)}, [](auto& p) { return diag(p[0].var()); });
  s.op("add", {s.param("a", 3, 4), s.param("b", 3, 4)}, [](auto& p) { return add(p[0].var(), p[1].var()); });
  s.op("add_row", {s.param("a", 3, 4), s.param("row", 1, 4)},
       [](auto& p) { return add_row(p[0].var(), p[1].var()); });
  s.op("scale", {s.param("a", 3, 4)}, [](auto& p) { return scale(p[0].var(), 0.37); });
  s.op("hadamard", {s.param("a", 3, 4), s.param("b", 3, 4)},
       [](auto& p) { return hadamard(p[0].var(), p[1].var()); });
  s.op("hadamard_const", {s.param("a", 3, 4)}, [](auto& p) {
    SplitMix64 rng(5);
    return hadamard(p[0].var(), random_matrix(3, 4, rng));
  });
  s.op("silu", {s.param("a", 3, 4, 2.0)}, [](auto& p) { return silu(p[0].var()); });
  s.op("sum", {s.param("a", 3, 4)}, [](auto& p) { return sum(p[0].var()); });
  s.op("softmax_rows", {s.param("a", 3, 5, 2.0)}, [](auto& p) { return softmax_rows(p[0].var()); });
  s.op("causal_softmax_rows", {s.param("a", 4, 4, 2.0)}, [](auto& p) { return causal_softmax_rows(p[0].var()); });
  s.op("layer_norm", {s.param("x", 3, 6), s.param("gain", 1, 6), s.param("bias", 1, 6)},
       [](auto& p) { return layer_norm(p[0].var(), p[1].var(), p[2].var()); });
  s.op("concat_rows", {s.param("a", 2, 3), s.param("b", 3, 3)},
       [](auto& p) { return concat_rows(std::vector<V>{p[0].var(), p[1].var()}); });
  s.op("gather_rows", {s.param("table", 5, 3)}, [](auto& p) {
    static const std::vector<std::size_t> idx{4, 0, 4, 2};
    return gather_rows(p[0].var(), std::span<const std::size_t>(idx));
  });
  s.op("cross_entropy", {s.param("logits", 4, 6, 2.0)}, [](auto& p) {
    static const std::vector<std::size_t> targets{0, 5, 2, 3}, positions{1, 3};
    return cross_entropy(p[0].var(), std::span<const std::size_t>(targets), std::span<const std::size_t>(positions));
  });
}

void check_blocks(Suite& s) {
  SplitMix64 feat_rng(11);
  const Tensor<double> x12 = random_matrix(4, 8, feat_rng), x24 = random_matrix(4, 8, feat_rng);
  auto projector_params = [&](int layer) {
    const std::string pre = "proj.l" + std::to_string(layer) + ".";
    std::vector<P> v{s.param(pre + "w1", 8, 4, 0.5), s.param(pre + "lambda", 1, 4), s.param(pre + "w2", 4, 6, 0.5)};
    return v;
  };

  s.op("srproj", projector_params(12), [&](auto& p) {
    const V hidden = silu(matmul(V(x12), p[0].var()));
    return matmul(matmul(hidden, diag(p[1].var())), p[2].var());
  });
  s.op("proj_baseline", {s.param("w1", 8, 4, 0.5), s.param("w2", 4, 6, 0.5)},
       [&](auto& p) { return scale(matmul(silu(matmul(V(x12), p[0].var())), p[1].var()), 0.1); });

  for (const auto mode : {FusionMode::average, FusionMode::weighted_average, FusionMode::add, FusionMode::concat}) {
    FusionSpec spec;
    spec.mode = mode;
    if (mode == FusionMode::weighted_average) spec.weights = {0.7, 0.3};
    auto params = projector_params(24);
    for (auto& p : projector_params(12)) params.push_back(std::move(p));
    s.op(std::string("fusion.") + to_string(mode), std::move(params), [&, spec](auto& p) {
      std::vector<V> projected;
      for (std::size_t l = 0; l < 2; ++l) {
        const V hidden = silu(matmul(V(l == 0 ? x24 : x12), p[3 * l].var()));
        projected.push_back(matmul(matmul(hidden, diag(p[3 * l + 1].var())), p[3 * l + 2].var()));
      }
      return fuse_projected(projected, spec);
    });
  }

  SplitMix64 pos_rng(31);
  auto xattn = CrossAttnParams<double>::init("xattn.", 5, 6, 0.3, pos_rng);
  P xt = s.param("xt", 3, 6), xv = s.param("xv", 5, 6);
  auto forward = [&] {
    const auto qkv = form_qkv(xt.var(), xv.var(), xattn);
    const V alpha = attention_scores(qkv.q, qkv.k);
    auto state = reset_state<double>(3, 5, 0.4, 0.85, true);
    update_mask(state, alpha.value());
    SplitMix64 rng(41);
    return probe(fused_attention(alpha, state, qkv.v), rng);
  };
  s.summary.entries.push_back(
      {"cross_attention", finite_diff_check(forward, {&xt, &xv, &xattn.p1, &xattn.p2})});
}


SceneConfig tiny_scene() {
  SceneConfig s;
  s.n_patches = 4;
  s.d1 = 8;
  s.n_concepts = 2;
  s.n_relations = 2;
  s.vocab = 16;
  s.encoder_depth = 4;
  s.intermediate_layer_index = 2;
  s.layers = {2, 4};
  return s;
}

void check_model(Suite& s) {
  const auto scene = tiny_scene();
  const std::vector<SyntheticSample> samples{generate_synthetic_scene(101, scene), generate_synthetic_scene(202, scene)};
  auto params = ModelParams<double>::init(gradcheck_model_config(), 17);
  // Move away from the no-op projector start so every path carries gradient.
  SplitMix64 rng(23);
  for (auto* p : params.parameters())
    for (auto& v : p->value().storage()) v += rng.normal(0.0, 0.3);
  const auto ptrs = params.trainable_parameters();

  for (const bool active : {false, true}) {
    ForwardOptions opt;
    opt.active = active;
    opt.delta = 0.3;
    opt.lambda_decay = 0.85;
    opt.keep_snapshots = true;
    std::vector<std::vector<Tensor<double>>> replay;
    for (const auto& smp : samples) {
      RecordScope off(false);
      replay.push_back(model_forward(make_sequence(smp).tokens, smp.features, params, opt).mask_snapshots);
    }
    opt.keep_snapshots = false;
    auto forward = [&] {
      V total;
      for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto seq = make_sequence(samples[b]);
        const auto fwd = model_forward(seq.tokens, samples[b].features, params, opt, active ? &replay[b] : nullptr);
        const V loss = cross_entropy(fwd.logits, std::span<const std::size_t>(seq.targets),
                                     std::span<const std::size_t>(seq.positions));
        total = b == 0 ? loss : add(total, loss);
      }
      return total;
    };
    s.summary.entries.push_back({active ? "model.active_fixed_mask" : "model.inactive", finite_diff_check(forward, ptrs, 1e-4)});
  }
}

}  // namespace

bool GradcheckSummary::passed() const {
  for (const auto& e : entries)
    if (!e.report.passed(tolerance)) return false;
  return !entries.empty();
}

ModelConfig gradcheck_model_config() {
  ModelConfig m;
  m.vocab = 16;
  m.d_model = 8;
  m.n_layers = 2;
  m.ffn_mult = 2;
  m.max_seq = 8;
  m.d1 = 8;
  m.d_hidden = 4;
  m.n_patches = 4;
  m.fusion.layers = {4, 2};
  return m;
}

GradcheckSummary cmd_gradcheck(bool silu_fault) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<testing::ScopedSiluFault> fault;
  if (silu_fault) fault.emplace();
  Suite s;
  check_ops(s);
  check_blocks(s);
  check_model(s);
  s.summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s.summary;
}

std::string format_gradcheck(const GradcheckSummary& s) {
  std::ostringstream os;
  char line[256];
  for (const auto& e : s.entries) {
    std::snprintf(line, sizeof line, "%-28s max_rel_err=%.3e worst=%s[%zu] %s\n", e.name.c_str(),
                  e.report.max_rel_error, e.report.worst_param.c_str(), e.report.worst_index,
                  e.report.passed(s.tolerance) ? "ok" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof line, "gradcheck %s: %zu checks, tolerance %.0e, %.2fs\n", s.passed() ? "PASSED" : "FAILED",
                s.entries.size(), s.tolerance, s.seconds);
  os << line;
  return os.str();
}

}  // namespace semrel
