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

// Visual projectors and multilevel fusion.
//
// proj_baseline is the conventional reduce / SiLU / lift projector with a
// fixed scale. srproj inserts a learnable diagonal Lambda after the
// activation; since the activations are N x d_h, Lambda scales hidden column
// j by lambda_j before lifting. fuse_multilevel projects each selected
// encoder layer with its own projector and combines the results, then
// multiplies by the global scale s.

#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "semrel/autodiff.hpp"
#include "semrel/features.hpp"
#include "semrel/rng.hpp"

namespace semrel {

template <typename T>
struct SRProjParams {
  int source_layer = 0;
  Parameter<T> w1;      // d1 x d_h
  Parameter<T> lambda;  // 1 x d_h, the diagonal of Lambda
  Parameter<T> w2;      // d_h x d2

  std::size_t d1() const { return w1.shape()[0]; }
  std::size_t d_hidden() const { return w1.shape()[1]; }
  std::size_t d2() const { return w2.shape()[1]; }

  // W1 ~ U(+-sqrt(6/d1)), Lambda = 1, W2 = 0: the projector starts as a no-op.
  static SRProjParams init(int source_layer, std::size_t d1, std::size_t d_hidden, std::size_t d2, SplitMix64& rng) {
    if (d_hidden >= std::min(d1, d2))
      throw std::invalid_argument("SRProjParams: d_h (" + std::to_string(d_hidden) + ") must be < min(d1, d2) = " +
                                  std::to_string(std::min(d1, d2)));
    const std::string prefix = "proj.l" + std::to_string(source_layer) + ".";
    Tensor<T> w1 = Tensor<T>::matrix(d1, d_hidden);
    const double bound = std::sqrt(6.0 / static_cast<double>(d1));
    for (auto& v : w1.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    SRProjParams p;
    p.source_layer = source_layer;
    p.w1 = Parameter<T>(prefix + "w1", std::move(w1));
    p.lambda = Parameter<T>(prefix + "lambda", Tensor<T>::matrix(1, d_hidden, T{1}));
    p.w2 = Parameter<T>(prefix + "w2", Tensor<T>::matrix(d_hidden, d2));
    return p;
  }
};

enum class FusionMode { average, weighted_average, add, concat };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::average: return "average";
    case FusionMode::weighted_average: return "weighted-average";
    case FusionMode::add: return "add";
    case FusionMode::concat: return "concat";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "average") return FusionMode::average;
  if (s == "weighted-average") return FusionMode::weighted_average;
  if (s == "add") return FusionMode::add;
  if (s == "concat") return FusionMode::concat;
  throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

struct FusionSpec {
  FusionMode mode = FusionMode::average;
  // Selected encoder layers, final layer first. Weights follow this order.
  std::vector<int> layers{24, 12};
  std::vector<double> weights;
  double scale = 0.1;

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("FusionSpec: no layers selected");
    if (mode == FusionMode::weighted_average) {
      if (weights.size() != layers.size())
        throw std::invalid_argument("FusionSpec: weighted-average needs one weight per layer");
      double total = 0.0;
      for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("FusionSpec: weights must be non-negative");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("FusionSpec: weights must sum to 1");
    } else if (!weights.empty()) {
      throw std::invalid_argument(std::string("FusionSpec: weights given for mode ") + to_string(mode));
    }
  }

  std::size_t token_multiplier() const { return mode == FusionMode::concat ? layers.size() : 1; }
};

inline void to_json(nlohmann::json& j, const FusionSpec& f) {
  j = {{"mode", to_string(f.mode)}, {"layers", f.layers}, {"weights", f.weights}, {"scale", f.scale}};
}

inline void from_json(const nlohmann::json& j, FusionSpec& f) {
  FusionSpec d;
  f.mode = parse_fusion_mode(j.value("mode", std::string(to_string(d.mode))));
  f.layers = j.value("layers", d.layers);
  f.weights = j.value("weights", d.weights);
  f.scale = j.value("scale", d.scale);
}

template <typename T>
Var<T> proj_baseline(const Var<T>& xv, const SRProjParams<T>& p, T scale_factor) {
  // The scale multiplies the hidden activations, the slot Lambda occupies in srproj.
  return matmul(scale(silu(matmul(xv, p.w1.var())), scale_factor), p.w2.var());
}

template <typename T>
Var<T> srproj(const Var<T>& xv, const SRProjParams<T>& p) {
  const Var<T> hidden = silu(matmul(xv, p.w1.var()));
  return matmul(matmul(hidden, diag(p.lambda.var())), p.w2.var());
}

template <typename T>
Tensor<T> feature_tensor(const MultilevelFeatures& f, int layer) {
  return f.layer(layer).template cast<T>();
}

template <typename T>
const SRProjParams<T>& projector_for(const std::vector<SRProjParams<T>>& projectors, int layer) {
  for (const auto& p : projectors)
    if (p.source_layer == layer) return p;
  throw std::invalid_argument("fuse_multilevel: no projector bound to layer " + std::to_string(layer));
}

// Each selected layer's projection, in spec.layers order, before fusion.
template <typename T>
std::vector<Var<T>> project_layers(const MultilevelFeatures& features, const std::vector<SRProjParams<T>>& projectors,
                                   const FusionSpec& spec) {
  std::vector<Var<T>> out;
  for (int layer : spec.layers)
    out.push_back(srproj(Var<T>(feature_tensor<T>(features, layer)), projector_for(projectors, layer)));
  return out;
}

template <typename T>
Var<T> fuse_projected(const std::vector<Var<T>>& projected, const FusionSpec& spec) {
  spec.validate();
  if (projected.size() != spec.layers.size()) throw DimensionError("fuse: one projection per selected layer required");
  Var<T> fused;
  switch (spec.mode) {
    case FusionMode::concat:
      fused = concat_rows(projected);
      break;
    case FusionMode::add:
      fused = projected[0];
      for (std::size_t l = 1; l < projected.size(); ++l) fused = add(fused, projected[l]);
      break;
    case FusionMode::average:
    case FusionMode::weighted_average: {
      const std::vector<double> w = spec.mode == FusionMode::average
                                        ? std::vector<double>(projected.size(), 1.0 / static_cast<double>(projected.size()))
                                        : spec.weights;
      fused = scale(projected[0], static_cast<T>(w[0]));
      for (std::size_t l = 1; l < projected.size(); ++l) fused = add(fused, scale(projected[l], static_cast<T>(w[l])));
      break;
    }
  }
  return scale(fused, static_cast<T>(spec.scale));
}

template <typename T>
Var<T> fuse_multilevel(const MultilevelFeatures& features, const std::vector<SRProjParams<T>>& projectors,
                       const FusionSpec& spec) {
  spec.validate();
  return fuse_projected(project_layers(features, projectors, spec), spec);
}

struct HiddenActivationMap {
  std::vector<double> values;  // one per token
  double lambda = 1.0;
};

// Column `dim` of SiLU(Xv W1) and the matching Lambda entry. Independent of W2.
template <typename T>
HiddenActivationMap hidden_activation_map(const Tensor<T>& xv, const SRProjParams<T>& p, std::size_t dim) {
  if (dim >= p.d_hidden())
    throw std::out_of_range("hidden_activation_map: dim " + std::to_string(dim) + " >= d_h " +
                            std::to_string(p.d_hidden()));
  RecordScope off(false);
  const Var<T> hidden = silu(matmul(Var<T>(xv), p.w1.var()));
  HiddenActivationMap out;
  out.lambda = static_cast<double>(p.lambda.value()[dim]);
  for (std::size_t i = 0; i < hidden.rows(); ++i) out.values.push_back(static_cast<double>(hidden.value()(i, dim)));
  return out;
}

}  // namespace semrel
