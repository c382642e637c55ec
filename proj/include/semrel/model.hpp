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

// Toy causal decoder with cross-attention injected into every layer.
//
// Forward pass for one sample:
//   X_t = tok_embed[tokens] + pos_embed[0..n)
//   X_v = fuse_multilevel(features)          (once, shared by all layers)
//   M   = ones(N_t, N_v)
//   for each layer:
//     X_t = X_t + SelfAttn(LN1(X_t))          (single head, causal softmax)
//     Q, K, V = X_t, X_v + P1, X_v + P2
//     alpha = SiLU(Q K^T); update M; X_fuse = (M o alpha) V
//     X_t = X_fuse + X_t + FFN(LN2(X_t))
//   logits = LN_f(X_t) head

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "semrel/autodiff.hpp"
#include "semrel/config.hpp"
#include "semrel/inheritable_attention.hpp"
#include "semrel/rng.hpp"
#include "semrel/srproj.hpp"
#include "semrel/synthetic.hpp"

namespace semrel {

template <typename T>
struct LayerParams {
  Parameter<T> ln1_gain, ln1_bias;
  Parameter<T> wq, wk, wv, wo;
  Parameter<T> ln2_gain, ln2_bias;
  Parameter<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  CrossAttnParams<T> xattn;
};

// Parameters outside the LM body; the only ones trained in PEFT mode.
inline bool is_adapter_parameter(const std::string& name) {
  return name.rfind("proj.", 0) == 0 || name.find(".xattn.") != std::string::npos;
}

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  Parameter<T> tok_embed;  // vocab x d2
  Parameter<T> pos_embed;  // max_seq x d2
  std::vector<LayerParams<T>> layers;
  Parameter<T> lnf_gain, lnf_bias;
  Parameter<T> head;  // d2 x vocab
  std::vector<SRProjParams<T>> projectors;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed);
    const std::size_t d = cfg.d_model, f = cfg.d_model * cfg.ffn_mult;
    auto normal = [&](std::size_t r, std::size_t c, double stddev) {
      Tensor<T> t = Tensor<T>::matrix(r, c);
      for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
      return t;
    };
    auto ones = [](std::size_t c) { return Tensor<T>::matrix(1, c, T{1}); };
    auto zeros = [](std::size_t c) { return Tensor<T>::matrix(1, c); };
    const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = wstd / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

    ModelParams p;
    p.cfg = cfg;
    p.tok_embed = Parameter<T>("embed.tok", normal(cfg.vocab, d, cfg.embed_std));
    p.pos_embed = Parameter<T>("embed.pos", normal(cfg.max_seq, d, cfg.embed_std));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      LayerParams<T> lp;
      lp.ln1_gain = Parameter<T>(pre + "ln1.gain", ones(d));
      lp.ln1_bias = Parameter<T>(pre + "ln1.bias", zeros(d));
      lp.wq = Parameter<T>(pre + "attn.wq", normal(d, d, wstd));
      lp.wk = Parameter<T>(pre + "attn.wk", normal(d, d, wstd));
      lp.wv = Parameter<T>(pre + "attn.wv", normal(d, d, wstd));
      lp.wo = Parameter<T>(pre + "attn.wo", normal(d, d, out_std));
      lp.ln2_gain = Parameter<T>(pre + "ln2.gain", ones(d));
      lp.ln2_bias = Parameter<T>(pre + "ln2.bias", zeros(d));
      lp.ffn_w1 = Parameter<T>(pre + "ffn.w1", normal(d, f, wstd));
      lp.ffn_b1 = Parameter<T>(pre + "ffn.b1", zeros(f));
      lp.ffn_w2 = Parameter<T>(pre + "ffn.w2", normal(f, d, 1.0 / std::sqrt(static_cast<double>(f)) /
                                                                std::sqrt(2.0 * static_cast<double>(cfg.n_layers))));
      lp.ffn_b2 = Parameter<T>(pre + "ffn.b2", zeros(d));
      lp.xattn = CrossAttnParams<T>::init(pre + "xattn.", cfg.n_vision(), d, cfg.cross_pos_std, rng);
      p.layers.push_back(std::move(lp));
    }
    p.lnf_gain = Parameter<T>("final_ln.gain", ones(d));
    p.lnf_bias = Parameter<T>("final_ln.bias", zeros(d));
    p.head = Parameter<T>("head", normal(d, cfg.vocab, wstd));
    for (int layer : cfg.fusion.layers)
      p.projectors.push_back(SRProjParams<T>::init(layer, cfg.d1, cfg.d_hidden, d, rng));
    p.apply_trainable_split();
    return p;
  }

  void apply_trainable_split() {
    for (auto* prm : parameters()) prm->set_trainable(!cfg.peft || is_adapter_parameter(prm->name()));
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(self.tok_embed);
    fn(self.pos_embed);
    for (auto& lp : self.layers) {
      for (auto* prm : {&lp.ln1_gain, &lp.ln1_bias, &lp.wq, &lp.wk, &lp.wv, &lp.wo, &lp.ln2_gain, &lp.ln2_bias,
                        &lp.ffn_w1, &lp.ffn_b1, &lp.ffn_w2, &lp.ffn_b2, &lp.xattn.p1, &lp.xattn.p2})
        fn(*prm);
    }
    fn(self.lnf_gain);
    fn(self.lnf_bias);
    fn(self.head);
    for (auto& pr : self.projectors) {
      fn(pr.w1);
      fn(pr.lambda);
      fn(pr.w2);
    }
  }

  // Every parameter in a fixed order (checkpoint order).
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    visit(*this, [&](Parameter<T>& prm) { out.push_back(&prm); });
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    visit(*this, [&](const Parameter<T>& prm) { out.push_back(&prm); });
    return out;
  }
  std::vector<Parameter<T>*> trainable_parameters() {
    std::vector<Parameter<T>*> out;
    for (auto* prm : parameters())
      if (prm->trainable()) out.push_back(prm);
    return out;
  }
  void zero_grad() {
    for (auto* prm : parameters()) prm->zero_grad();
  }
};

// Teacher-forced sequence: input = question ++ answer[:-1]; the answer token
// k is predicted at position |question| - 1 + k.
struct TokenSequence {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> targets;    // per position; 0 where unused
  std::vector<std::size_t> positions;  // answer positions, the loss mask
};

inline TokenSequence make_sequence(const std::vector<int>& question, const std::vector<int>& answer) {
  if (question.empty() || answer.empty()) throw std::invalid_argument("make_sequence: empty question or answer");
  TokenSequence s;
  for (int t : question) s.tokens.push_back(static_cast<std::size_t>(t));
  for (std::size_t k = 0; k + 1 < answer.size(); ++k) s.tokens.push_back(static_cast<std::size_t>(answer[k]));
  s.targets.assign(s.tokens.size(), 0);
  for (std::size_t k = 0; k < answer.size(); ++k) {
    const std::size_t pos = question.size() - 1 + k;
    s.targets[pos] = static_cast<std::size_t>(answer[k]);
    s.positions.push_back(pos);
  }
  return s;
}

inline TokenSequence make_sequence(const SyntheticSample& s) { return make_sequence(s.question, s.answer); }

struct ForwardOptions {
  CrossAttentionKind attention = CrossAttentionKind::inheritable;
  bool active = false;
  double delta = 0.3;
  double lambda_decay = 0.85;
  bool keep_snapshots = false;
};

template <typename T>
struct ForwardResult {
  Var<T> logits;
  std::vector<Tensor<T>> mask_snapshots;   // M after each layer's update (keep_snapshots)
  std::vector<Tensor<T>> alpha_snapshots;  // alpha of each layer (keep_snapshots)
  Tensor<T> final_mask;
  double alpha_min = std::numeric_limits<double>::infinity();
  double alpha_max = -std::numeric_limits<double>::infinity();
};

inline ForwardOptions forward_options(const TrainConfig& cfg, std::size_t epoch) {
  return {cfg.attention, cfg.active_in_epoch(epoch), cfg.delta, cfg.lambda_decay, false};
}

// `replay_masks`, when non-null, supplies M for each layer in place of the
// update rule (used to hold the mask fixed under finite differences).
template <typename T>
ForwardResult<T> model_forward(const std::vector<std::size_t>& tokens, const MultilevelFeatures& features,
                               const ModelParams<T>& p, const ForwardOptions& opt,
                               const std::vector<Tensor<T>>* replay_masks = nullptr) {
  const auto& cfg = p.cfg;
  if (tokens.size() > cfg.max_seq)
    throw DimensionError("model_forward: sequence of " + std::to_string(tokens.size()) + " exceeds max_seq");
  if (replay_masks && replay_masks->size() != cfg.n_layers)
    throw std::invalid_argument("model_forward: need one replay mask per layer");
  const std::size_t n_t = tokens.size();
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d_model)));

  std::vector<std::size_t> pos(n_t);
  for (std::size_t i = 0; i < n_t; ++i) pos[i] = i;
  Var<T> x = add(gather_rows(p.tok_embed.var(), tokens), gather_rows(p.pos_embed.var(), pos));

  const Var<T> xv = fuse_multilevel(features, p.projectors, cfg.fusion);
  if (xv.rows() != cfg.n_vision())
    throw DimensionError("model_forward: fused vision tokens " + std::to_string(xv.rows()) + " != P rows " +
                         std::to_string(cfg.n_vision()));

  ForwardResult<T> out;
  auto state = reset_state<T>(n_t, xv.rows(), opt.delta, opt.lambda_decay, opt.active);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = p.layers[l];
    {
      const Var<T> h = layer_norm(x, lp.ln1_gain.var(), lp.ln1_bias.var());
      const Var<T> q = matmul(h, lp.wq.var());
      const Var<T> k = matmul(h, lp.wk.var());
      const Var<T> v = matmul(h, lp.wv.var());
      const Var<T> att = causal_softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
      x = add(x, matmul(matmul(att, v), lp.wo.var()));
    }

    const auto qkv = form_qkv(x, xv, lp.xattn);
    const Var<T> alpha = attention_scores(qkv.q, qkv.k);
    for (T a : alpha.value().data()) {
      out.alpha_min = std::min(out.alpha_min, static_cast<double>(a));
      out.alpha_max = std::max(out.alpha_max, static_cast<double>(a));
    }
    Var<T> fused;
    if (opt.attention == CrossAttentionKind::baseline) {
      fused = baseline_attention(alpha, qkv.v);
    } else {
      if (replay_masks)
        state.m = (*replay_masks)[l];
      else
        update_mask(state, alpha.value());
      fused = fused_attention(alpha, state, qkv.v);
    }
    if (opt.keep_snapshots) {
      out.mask_snapshots.push_back(state.m);
      out.alpha_snapshots.push_back(alpha.value());
    }

    const Var<T> h = layer_norm(x, lp.ln2_gain.var(), lp.ln2_bias.var());
    const Var<T> ffn =
        add_row(matmul(silu(add_row(matmul(h, lp.ffn_w1.var()), lp.ffn_b1.var())), lp.ffn_w2.var()), lp.ffn_b2.var());
    x = add(fused, add(x, ffn));
  }

  out.logits = matmul(layer_norm(x, p.lnf_gain.var(), p.lnf_bias.var()), p.head.var());
  out.final_mask = std::move(state.m);
  return out;
}

template <typename T>
ForwardResult<T> model_forward(const SyntheticSample& sample, const ModelParams<T>& p, std::size_t epoch,
                               const TrainConfig& cfg, bool keep_snapshots = false) {
  auto opt = forward_options(cfg, epoch);
  opt.keep_snapshots = keep_snapshots;
  return model_forward(make_sequence(sample).tokens, sample.features, p, opt);
}

}  // namespace semrel
