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

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "semrel/dataset.hpp"
#include "semrel/model.hpp"

namespace semrel {

// Plain SGD; momentum 0 by default.
template <typename T>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}

  void step(const std::vector<Parameter<T>*>& params, double lr) {
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto* prm = params[k];
      if (!prm->trainable()) continue;
      const Tensor<T> g = prm->grad();
      auto& value = prm->value();
      if (momentum_ == 0.0) {
        for (std::size_t i = 0; i < value.numel(); ++i) value[i] -= static_cast<T>(lr) * g[i];
        continue;
      }
      auto& vel = velocity_[k];
      if (vel.size() != value.numel()) vel.assign(value.numel(), T{0});
      for (std::size_t i = 0; i < value.numel(); ++i) {
        vel[i] = static_cast<T>(momentum_) * vel[i] + g[i];
        value[i] -= static_cast<T>(lr) * vel[i];
      }
    }
  }

 private:
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

struct StepResult {
  double loss = 0.0;
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  double mask_sparsity = 0.0;  // mean over the batch of the final-pass M sparsity
};

// One optimizer step on the mean answer-position cross-entropy of `batch`.
template <typename T>
StepResult train_step(std::span<const SyntheticSample* const> batch, ModelParams<T>& params, Sgd<T>& optimizer,
                      std::size_t epoch, const TrainConfig& cfg, double lr) {
  if (batch.empty()) throw DegenerateBatchError("train_step: empty batch");
  params.zero_grad();
  StepResult result;
  result.alpha_min = std::numeric_limits<double>::infinity();
  result.alpha_max = -std::numeric_limits<double>::infinity();
  const ForwardOptions opt = forward_options(cfg, epoch);
  auto abort = [&](const std::string& what) {
    std::ostringstream os;
    os << "train_step: " << what << " at epoch " << epoch << "; alpha range [" << result.alpha_min << ", "
       << result.alpha_max << "]";
    throw NumericError(os.str());
  };
  RecordScope record(true);
  Var<T> total;
  try {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const TokenSequence seq = make_sequence(*batch[b]);
      auto fwd = model_forward(seq.tokens, batch[b]->features, params, opt);
      result.alpha_min = std::min(result.alpha_min, fwd.alpha_min);
      result.alpha_max = std::max(result.alpha_max, fwd.alpha_max);
      result.mask_sparsity += mask_sparsity(fwd.final_mask) / static_cast<double>(batch.size());
      Var<T> loss = cross_entropy(fwd.logits, std::span<const std::size_t>(seq.targets),
                                  std::span<const std::size_t>(seq.positions));
      total = b == 0 ? loss : add(total, loss);
    }
  } catch (const NumericError& e) {
    abort(e.what());
  }
  total = scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
  result.loss = static_cast<double>(total.item());
  if (!std::isfinite(result.loss)) abort("non-finite loss");
  backward(total);
  optimizer.step(params.parameters(), lr);
  return result;
}

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
};

// Greedy decoding restricted to `candidates` (the answer vocabulary); a
// sample counts as correct when every answer token matches.
template <typename T>
EvalMetrics evaluate(std::span<const SyntheticSample> samples, const ModelParams<T>& params, const ForwardOptions& opt,
                     const std::vector<int>& candidates) {
  if (samples.empty()) throw DegenerateBatchError("evaluate: empty dataset");
  if (candidates.empty()) throw std::invalid_argument("evaluate: empty answer vocabulary");
  RecordScope off(false);
  EvalMetrics m;
  m.samples = samples.size();
  std::size_t correct = 0;
  double loss_sum = 0.0;
  auto argmax = [&](const Tensor<T>& logits, std::size_t row) {
    int best = candidates.front();
    for (int c : candidates)
      if (logits(row, static_cast<std::size_t>(c)) > logits(row, static_cast<std::size_t>(best))) best = c;
    return best;
  };
  for (const auto& s : samples) {
    const TokenSequence seq = make_sequence(s);
    const auto teacher = model_forward(seq.tokens, s.features, params, opt);
    loss_sum += static_cast<double>(cross_entropy(teacher.logits, std::span<const std::size_t>(seq.targets),
                                                  std::span<const std::size_t>(seq.positions))
                                        .item());
    std::vector<int> prefix = s.question;
    bool ok = true;
    for (std::size_t k = 0; k < s.answer.size(); ++k) {
      std::vector<std::size_t> tokens(prefix.begin(), prefix.end());
      const auto& logits = k == 0 && s.answer.size() == 1
                               ? teacher.logits.value()
                               : model_forward(tokens, s.features, params, opt).logits.value();
      const int predicted = argmax(logits, tokens.size() - 1);
      if (predicted != s.answer[k]) ok = false;
      prefix.push_back(predicted);
    }
    correct += ok;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  m.mean_loss = loss_sum / static_cast<double>(samples.size());
  return m;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
  double eval_loss = 0.0;
  double m_sparsity = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"lr", r.lr},
       {"train_loss", r.train_loss},
       {"eval_accuracy", r.eval_accuracy},
       {"eval_loss", r.eval_loss},
       {"m_sparsity", r.m_sparsity}};
}

// Fisher-Yates with SplitMix64, stable across standard libraries.
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

template <typename T>
using EpochCallback = std::function<void(const EpochRecord&, const ModelParams<T>&)>;

// Runs cfg.epochs epochs (1-indexed) of SGD with a per-step cosine schedule
// and evaluates on `eval` after each epoch in the mode that epoch trained in.
template <typename T>
std::vector<EpochRecord> train_model(ModelParams<T>& params, std::span<const SyntheticSample> train,
                                     std::span<const SyntheticSample> eval, const std::vector<int>& candidates,
                                     const TrainConfig& cfg, const EpochCallback<T>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DegenerateBatchError("train_model: empty training set");
  Sgd<T> optimizer(cfg.momentum);
  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::size_t step = 0;
  std::vector<EpochRecord> records;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_order(train.size(), derive_seed(cfg.seed, 300, epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(cfg.lr, step, total_steps);
    double sparsity_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<const SyntheticSample*> batch;
      for (std::size_t i = s * cfg.batch_size; i < std::min(train.size(), (s + 1) * cfg.batch_size); ++i)
        batch.push_back(&train[order[i]]);
      const auto r = train_step<T>(batch, params, optimizer, epoch, cfg, cosine_lr(cfg.lr, step, total_steps));
      rec.train_loss += r.loss / static_cast<double>(steps_per_epoch);
      sparsity_sum += r.mask_sparsity * static_cast<double>(batch.size());
    }
    rec.m_sparsity = sparsity_sum / static_cast<double>(train.size());
    if (!eval.empty()) {
      const auto metrics = evaluate(eval, params, forward_options(cfg, epoch), candidates);
      rec.eval_accuracy = metrics.accuracy;
      rec.eval_loss = metrics.mean_loss;
    }
    records.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
  }
  return records;
}

}  // namespace semrel
