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

// Reverse-mode automatic differentiation over dense matrices.
//
// A Var is a handle to a graph node. While a RecordScope is active, every op
// whose inputs require gradients stores its inputs and a backward closure;
// outside a RecordScope ops only compute values, so evaluation paths allocate
// no gradient state. backward() walks the recorded graph once in reverse
// topological order and then releases it: a second backward over the same
// graph is rejected with GraphError.
//
// Broadcasting is limited to adding a 1xd row to every row of an nxd matrix.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "semrel/tensor.hpp"

namespace semrel {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline thread_local bool g_recording = false;
inline thread_local bool g_silu_fault = false;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool released = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.numel(), T{0});
    return grad;
  }
};

// Gradient buffer of an input, or nullptr when that input is a constant.
template <typename T>
std::vector<T>* grad_of(Node<T>& n) {
  return n.requires_grad ? &n.ensure_grad() : nullptr;
}

}  // namespace detail

// Enables (or disables) graph recording on the current thread for its lifetime.
class RecordScope {
 public:
  explicit RecordScope(bool on = true) : previous_(detail::g_recording) { detail::g_recording = on; }
  ~RecordScope() { detail::g_recording = previous_; }
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

  static bool recording() { return detail::g_recording; }

 private:
  bool previous_;
};

namespace testing {
// Negative-control fixture: while alive, silu's backward rule is wrong by a
// factor of 1.5 on the current thread.
class ScopedSiluFault {
 public:
  ScopedSiluFault() : previous_(detail::g_silu_fault) { detail::g_silu_fault = true; }
  ~ScopedSiluFault() { detail::g_silu_fault = previous_; }
  ScopedSiluFault(const ScopedSiluFault&) = delete;
  ScopedSiluFault& operator=(const ScopedSiluFault&) = delete;

 private:
  bool previous_;
};
}  // namespace testing

template <typename T>
class Var {
 public:
  using Node = detail::Node<T>;

  Var() : node_(std::make_shared<Node>()) {}
  // Non-differentiable constant.
  explicit Var(Tensor<T> value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const {
    if (node_->value.numel() != 1) throw DimensionError("item() on non-scalar " + shape().str());
    return node_->value[0];
  }

  // Gradient accumulated by the last backward (zeros if untouched).
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(shape());
    return Tensor<T>(shape(), node_->grad);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// A named trainable (or frozen) leaf. Its value is only mutated through
// value(), which optimizers and finite-difference probes use.
template <typename T>
class Parameter {
 public:
  Parameter() : Parameter("", Tensor<T>()) {}
  Parameter(std::string name, Tensor<T> init, bool trainable = true)
      : name_(std::move(name)), node_(std::make_shared<detail::Node<T>>()) {
    node_->value = std::move(init);
    node_->requires_grad = trainable;
  }
  Parameter(const Parameter& other) : Parameter(other.name_, other.value(), other.trainable()) {}
  Parameter& operator=(const Parameter& other) {
    if (this != &other) *this = Parameter(other);
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }

  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool on) { node_->requires_grad = on; }

  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(shape());
    return Tensor<T>(shape(), node_->grad);
  }
  void zero_grad() { node_->grad.clear(); }

  Var<T> var() const { return Var<T>(node_); }

 private:
  std::string name_;
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

template <typename T, typename Backward>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (g_recording) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::forward<Backward>(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T, typename Backward>
Var<T> make_result_n(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (g_recording) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::forward<Backward>(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ, " + a.shape().str() + " x " + b.shape().str());
  Tensor<T> out = Tensor<T>::matrix(m, n);
  {
    const T* A = a.value().data().data();
    const T* B = b.value().data().data();
    T* C = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        const T* brow = B + p * n;
        T* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
  }
  return detail::make_result(std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    const T* A = self.inputs[0]->value.data().data();
    const T* B = self.inputs[1]->value.data().data();
    const T* G = self.grad.data();
    if (auto* ga = detail::grad_of(*self.inputs[0])) {
      T* GA = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* grow = G + i * n;
          const T* brow = B + p * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          GA[i * k + p] += acc;
        }
    }
    if (auto* gb = detail::grad_of(*self.inputs[1])) {
      T* GB = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = A[i * k + p];
          const T* grow = G + i * n;
          T* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_matrix(a.shape(), "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  return detail::make_result(std::move(out), {a}, [m, n](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
  });
}

// 1xd (or dx1) vector to a dxd diagonal matrix.
template <typename T>
Var<T> diag(const Var<T>& v) {
  const std::size_t d = v.value().numel();
  Tensor<T> out = Tensor<T>::matrix(d, d);
  for (std::size_t j = 0; j < d; ++j) out(j, j) = v.value()[j];
  return detail::make_result(std::move(out), {v}, [d](detail::Node<T>& self) {
    if (auto* gv = detail::grad_of(*self.inputs[0]))
      for (std::size_t j = 0; j < d; ++j) (*gv)[j] += self.grad[j * d + j];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (int s = 0; s < 2; ++s)
      if (auto* g = detail::grad_of(*self.inputs[s]))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

// a[n x d] + row[1 x d], broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require_matrix(a.shape(), "add_row");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + row.shape().str());
  const std::size_t n = a.rows(), d = a.cols();
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) += row.value()[j];
  return detail::make_result(std::move(out), {a, row}, [n, d](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < n * d; ++i) (*ga)[i] += self.grad[i];
    if (auto* gr = detail::grad_of(*self.inputs[1]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gr)[j] += self.grad[i * d + j];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  return detail::make_result(std::move(out), {a}, [c](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * self.grad[i];
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "hadamard");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node<T>& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    if (auto* ga = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * B[i];
    if (auto* gb = detail::grad_of(*self.inputs[1]))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * A[i];
  });
}

// Product with a constant mask. The mask never receives a gradient.
template <typename T>
Var<T> hadamard(const Var<T>& a, const Tensor<T>& mask) {
  require_same_shape(a.shape(), mask.shape(), "hadamard");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return detail::make_result(std::move(out), {a}, [mask](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * mask[i];
  });
}

// Generic elementwise map with derivative df(x).
template <typename T, typename F, typename DF>
Var<T> unary_op(const Var<T>& a, F f, DF df) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = f(v);
  return detail::make_result(std::move(out), {a}, [df](detail::Node<T>& self) {
    const auto& X = self.inputs[0]->value;
    if (auto* g = detail::grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * df(X[i]);
  });
}

template <typename T>
T silu_value(T x) {
  return x * detail::sigmoid(x);
}

template <typename T>
T silu_derivative(T x) {
  const T s = detail::sigmoid(x);
  return s * (T{1} + x * (T{1} - s));
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  const bool fault = detail::g_silu_fault;
  return unary_op(x, [](T v) { return silu_value(v); },
                  [fault](T v) { return fault ? T(1.5) * silu_derivative(v) : silu_derivative(v); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (T v : a.value().data()) acc += v;
  return detail::make_result(Tensor<T>::scalar(acc), {a}, [](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(*self.inputs[0]))
      for (auto& v : *g) v += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

namespace detail {

template <typename T>
Var<T> softmax_rows_impl(const Var<T>& x, bool causal) {
  require_matrix(x.shape(), "softmax_rows");
  check_finite(x.value(), "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? std::min(n, i + 1) : n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, x.value()(i, j));
    T z{0};
    for (std::size_t j = 0; j < width; ++j) z += (out(i, j) = std::exp(x.value()(i, j) - mx));
    for (std::size_t j = 0; j < width; ++j) out(i, j) /= z;
  }
  return make_result(std::move(out), {x}, [m, n](Node<T>& self) {
    auto* gx = grad_of(*self.inputs[0]);
    if (!gx) return;
    const auto& Y = self.value;
    for (std::size_t i = 0; i < m; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * Y(i, j);
      for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += Y(i, j) * (self.grad[i * n + j] - dot);
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  return detail::softmax_rows_impl(x, false);
}

// Softmax over columns j <= i of row i; entries above the diagonal are 0.
template <typename T>
Var<T> causal_softmax_rows(const Var<T>& x) {
  return detail::softmax_rows_impl(x, true);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  require_matrix(x.shape(), "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.value().numel() != d || bias.value().numel() != d)
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  Tensor<T> out = Tensor<T>::matrix(m, d);
  Tensor<T> xhat = Tensor<T>::matrix(m, d);
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += x.value()(i, j);
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (x.value()(i, j) - mu) * (x.value()(i, j) - mu);
    var /= static_cast<T>(d);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (x.value()(i, j) - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * gain.value()[j] + bias.value()[j];
    }
  }
  return detail::make_result(
      std::move(out), {x, gain, bias},
      [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto& G = self.grad;
        const auto& g = self.inputs[1]->value;
        if (auto* gx = detail::grad_of(*self.inputs[0]))
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dxhat{0}, mean_dxhat_xhat{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = G[i * d + j] * g[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat(i, j);
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = G[i * d + j] * g[j];
              (*gx)[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
            }
          }
        if (auto* gg = detail::grad_of(*self.inputs[1]))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += G[i * d + j] * xhat(i, j);
        if (auto* gb = detail::grad_of(*self.inputs[2]))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += G[i * d + j];
      });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.shape(), "concat_rows");
    if (p.cols() != d) throw DimensionError("concat_rows: column mismatch " + p.shape().str());
    total += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(total, d);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.storage().begin() + offset);
    offset += p.value().numel();
  }
  return detail::make_result_n(std::move(out), parts, [](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.numel();
      if (auto* g = detail::grad_of(*in))
        for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[offset + i];
      offset += len;
    }
  });
}

// Rows `indices` of `table`, in order (embedding lookup).
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::size_t> indices) {
  require_matrix(table.shape(), "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  const std::size_t d = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor<T> out = Tensor<T>::matrix(idx.size(), d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= table.rows())
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " outside " + table.shape().str());
    for (std::size_t j = 0; j < d; ++j) out(r, j) = table.value()(idx[r], j);
  }
  return detail::make_result(std::move(out), {table}, [d, idx = std::move(idx)](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(*self.inputs[0]))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) (*g)[idx[r] * d + j] += self.grad[r * d + j];
  });
}

// Mean over `positions` of -log softmax(logits[p])[targets[p]].
// `targets` is indexed by position and only read at the masked positions.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets,
                     std::span<const std::size_t> positions) {
  require_matrix(logits.shape(), "cross_entropy");
  if (positions.empty()) throw DegenerateBatchError("cross_entropy: empty position mask");
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " positions");
  const auto& L = logits.value();
  detail::check_finite(L, "cross_entropy");
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  std::vector<std::size_t> tgt(pos.size());
  Tensor<T> probs = Tensor<T>::matrix(pos.size(), v);
  T total{0};
  for (std::size_t r = 0; r < pos.size(); ++r) {
    const std::size_t p = pos[r];
    if (p >= t) throw DimensionError("cross_entropy: position out of range");
    tgt[r] = targets[p];
    if (tgt[r] >= v) throw DimensionError("cross_entropy: target index out of vocabulary");
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, L(p, j));
    T z{0};
    for (std::size_t j = 0; j < v; ++j) z += (probs(r, j) = std::exp(L(p, j) - mx));
    for (std::size_t j = 0; j < v; ++j) probs(r, j) /= z;
    total += std::log(z) + mx - L(p, tgt[r]);
  }
  const T inv = T{1} / static_cast<T>(pos.size());
  return detail::make_result(
      Tensor<T>::scalar(total * inv), {logits},
      [v, inv, pos = std::move(pos), tgt = std::move(tgt), probs = std::move(probs)](detail::Node<T>& self) {
        auto* g = detail::grad_of(*self.inputs[0]);
        if (!g) return;
        const T up = self.grad[0] * inv;
        for (std::size_t r = 0; r < pos.size(); ++r)
          for (std::size_t j = 0; j < v; ++j)
            (*g)[pos[r] * v + j] += up * (probs(r, j) - (j == tgt[r] ? T{1} : T{0}));
      });
}

// ---------------------------------------------------------------------------

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

// Populates gradients of every parameter reachable from `loss`. Parameter
// gradients accumulate; call zero_grad() between steps.
template <typename T>
BackwardStats backward(const Var<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.value().numel() != 1) throw GraphError("backward: loss must be a scalar, got " + loss.shape().str());
  if (!loss.requires_grad()) throw GraphError("backward: loss does not depend on any trainable parameter");
  if (loss.node()->released) throw GraphError("backward: graph already consumed by a previous backward");

  // Holding shared_ptrs keeps every node alive while inputs are released.
  std::vector<std::shared_ptr<NodeT>> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<std::shared_ptr<NodeT>, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      std::shared_ptr<NodeT> child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        if (child->released) throw GraphError("backward: graph already consumed by a previous backward");
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T{1};
  BackwardStats stats;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = it->get();
    ++stats.nodes_visited;
    if (!node->backward) continue;  // leaf
    if (!node->grad.empty()) node->backward(*node);
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->released = true;
  }
  return stats;
}

}  // namespace semrel
