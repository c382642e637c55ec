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

// Cross-attention from text tokens (rows) to vision tokens (columns) with
// SiLU scores and an inherited suppression matrix M.
//
// Per LM layer, in this order:
//   alpha  = SiLU(Q K^T)                 Q = X_t, K = X_v + P1, V = X_v + P2
//   M      : in each row, the floor(delta * N_v) smallest alpha entries are
//            multiplied by lambda_decay (ties go to the lower column index)
//   X_fuse = (M o alpha) V
//
// M starts as all ones for every forward pass and is shared by all layers of
// that pass. It is a constant for autodiff.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "semrel/autodiff.hpp"
#include "semrel/rng.hpp"

namespace semrel {

template <typename T>
struct CrossAttnParams {
  Parameter<T> p1;  // N_v x d2, added to keys
  Parameter<T> p2;  // N_v x d2, added to values

  std::size_t n_vision() const { return p1.shape()[0]; }

  static CrossAttnParams init(const std::string& prefix, std::size_t n_vision, std::size_t d2, double stddev,
                              SplitMix64& rng) {
    auto draw = [&] {
      Tensor<T> t = Tensor<T>::matrix(n_vision, d2);
      for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
      return t;
    };
    CrossAttnParams p;
    p.p1 = Parameter<T>(prefix + "p1", draw());
    p.p2 = Parameter<T>(prefix + "p2", draw());
    return p;
  }
};

template <typename T>
struct InheritableState {
  Tensor<T> m;
  double delta = 0.0;
  double lambda_decay = 1.0;
  bool active = false;

  std::size_t decays_per_row() const {
    // The 1e-9 guard absorbs representation error such as 0.29 * 100 = 28.999...
    return static_cast<std::size_t>(std::floor(delta * static_cast<double>(m.cols()) + 1e-9));
  }
};

inline void validate_decay_params(double delta, double lambda_decay) {
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in [0, 1)");
  if (!(lambda_decay > 0.0 && lambda_decay <= 1.0)) throw std::invalid_argument("lambda_decay must lie in (0, 1]");
}

template <typename T>
InheritableState<T> reset_state(std::size_t n_text, std::size_t n_vision, double delta, double lambda_decay,
                                bool active) {
  validate_decay_params(delta, lambda_decay);
  return {Tensor<T>::matrix(n_text, n_vision, T{1}), delta, lambda_decay, active};
}

template <typename T>
struct QKV {
  Var<T> q, k, v;
};

template <typename T>
QKV<T> form_qkv(const Var<T>& xt, const Var<T>& xv, const CrossAttnParams<T>& p) {
  if (xt.cols() != xv.cols())
    throw DimensionError("form_qkv: text width " + std::to_string(xt.cols()) + " != vision width " +
                         std::to_string(xv.cols()));
  require_same_shape(xv.shape(), p.p1.shape(), "form_qkv");
  return {xt, add(xv, p.p1.var()), add(xv, p.p2.var())};
}

template <typename T>
Var<T> attention_scores(const Var<T>& q, const Var<T>& k) {
  if (q.cols() != k.cols())
    throw DimensionError("attention_scores: " + q.shape().str() + " vs " + k.shape().str());
  return silu(matmul(q, transpose(k)));
}

template <typename T>
void update_mask(InheritableState<T>& state, const Tensor<T>& alpha) {
  require_same_shape(state.m.shape(), alpha.shape(), "update_mask");
  validate_decay_params(state.delta, state.lambda_decay);
  if (!state.active) return;
  const std::size_t n = alpha.cols();
  const std::size_t k = state.decays_per_row();
  if (k == 0) return;
  const T decay = static_cast<T>(state.lambda_decay);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < alpha.rows(); ++i) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const T va = alpha(i, a), vb = alpha(i, b);
                        return va < vb || (va == vb && a < b);
                      });
    for (std::size_t r = 0; r < k; ++r) state.m(i, idx[r]) *= decay;
  }
}

template <typename T>
Var<T> fused_attention(const Var<T>& alpha, const InheritableState<T>& state, const Var<T>& v) {
  return matmul(hadamard(alpha, state.m), v);
}

// Unmasked SiLU cross-attention, alpha V.
template <typename T>
Var<T> baseline_attention(const Var<T>& alpha, const Var<T>& v) {
  return matmul(alpha, v);
}

template <typename T>
double mask_sparsity(const Tensor<T>& m) {
  std::size_t below = 0;
  for (T v : m.data()) below += v < T{1};
  return static_cast<double>(below) / static_cast<double>(m.numel());
}

// ---------------------------------------------------------------------------
// Export: CSV (rows = text tokens) and 8-bit binary PGM where
// v maps to round(255 * (v - lambda^L) / (1 - lambda^L)).

template <typename T>
void write_mask_csv(const Tensor<T>& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(9);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << static_cast<double>(m(i, j));
    out << '\n';
  }
}

inline unsigned char heatmap_level(double v, double lambda_decay, std::size_t n_layers) {
  const double floor_value = std::pow(lambda_decay, static_cast<double>(n_layers));
  const double span = 1.0 - floor_value;
  if (span <= 0.0) return 255;
  const double level = std::round(255.0 * (v - floor_value) / span);
  return static_cast<unsigned char>(std::clamp(level, 0.0, 255.0));
}

template <typename T>
void write_mask_pgm(const Tensor<T>& m, double lambda_decay, std::size_t n_layers, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  for (T v : m.data()) out.put(static_cast<char>(heatmap_level(static_cast<double>(v), lambda_decay, n_layers)));
}

}  // namespace semrel
