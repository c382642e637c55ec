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

#include <doctest.h>

#include <cmath>
#include <limits>

#include "semrel/autodiff.hpp"
#include "semrel/gradcheck.hpp"
#include "support.hpp"

using namespace semrel;
using semrel::test::random_tensor;

namespace {

using P = Parameter<double>;
using V = Var<double>;

V weighted(const V& out, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return sum(hadamard(out, random_tensor<double>(out.rows(), out.cols(), rng)));
}

}  // namespace

TEST_CASE("shape and tensor basics") {
  CHECK_THROWS_AS(Shape({2, 0}), DimensionError);
  const Shape s{3, 4};
  CHECK(s.numel() == 12);
  CHECK(s.str() == "[3x4]");
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS((Tensor<float>::from_rows({{1, 2}, {3}})), DimensionError);
  const auto t = Tensor<double>::from_rows({{1, 2}, {3, 4}});
  CHECK(t(1, 0) == 3);
  CHECK(t.row(1) == std::vector<double>{3, 4});
  CHECK(t.cast<float>()(0, 1) == 2.0f);
}

TEST_CASE("splitmix64 matches the reference sequence") {
  // First outputs of the published SplitMix64 for seed 0.
  SplitMix64 rng(0);
  CHECK(rng.next() == 0xE220A8397B1DCDAFULL);
  CHECK(rng.next() == 0x6E789E6AA1B965F4ULL);
  CHECK(rng.next() == 0x06C45D188009454FULL);
  SplitMix64 a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  SplitMix64 c(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(c.below(5) < 5);
  }
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
}

TEST_CASE("normal draws have unit moments") {
  SplitMix64 rng(42);
  double s = 0, ss = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    ss += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(ss / n - 1.0) < 0.02);
}

TEST_CASE("matmul agrees with a naive product and checks extents") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(7), n = 1 + rng.below(7);
    const auto a = random_tensor<double>(m, k, rng), b = random_tensor<double>(k, n, rng);
    CHECK(test::max_abs_diff(matmul(V(a), V(b)).value(), test::naive_matmul(a, b)) < 1e-12);
  }
  CHECK_THROWS_AS(matmul(V(Tensor<double>::matrix(2, 3)), V(Tensor<double>::matrix(2, 3))), DimensionError);
  CHECK_THROWS_AS(add(V(Tensor<double>::matrix(2, 3)), V(Tensor<double>::matrix(3, 2))), DimensionError);
}

TEST_CASE("matmul propagates NaN") {
  auto a = Tensor<double>::from_rows({{0.0, 1.0}});
  auto b = Tensor<double>::from_rows({{std::nan("")}, {1.0}});
  CHECK(std::isnan(matmul(V(a), V(b)).value()[0]));
}

TEST_CASE("silu values and derivative") {
  CHECK(silu_value(0.0) == 0.0);
  CHECK(silu_value(2.0) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  CHECK(silu_derivative(0.0) == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one even at large magnitudes") {
  SplitMix64 rng(5);
  for (double mag : {1e-3, 1.0, 1e3, -1e3}) {
    auto x = random_tensor<double>(6, 9, rng, std::abs(mag));
    for (std::size_t j = 0; j < x.cols(); ++j) x(0, j) = mag;
    const auto y = softmax_rows(V(x)).value();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        CHECK(std::isfinite(y(i, j)));
        s += y(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  auto bad = Tensor<double>::matrix(2, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(softmax_rows(V(bad)), NumericError);
}

TEST_CASE("causal softmax leaves the future at exactly zero") {
  SplitMix64 rng(6);
  const auto y = causal_softmax_rows(V(random_tensor<double>(5, 5, rng))).value();
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (j > i) CHECK(y(i, j) == 0.0);
      s += y(i, j);
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("layer norm normalizes rows") {
  SplitMix64 rng(7);
  const V g(Tensor<double>::matrix(1, 8, 1.0)), b(Tensor<double>::matrix(1, 8, 0.0));
  const auto y = layer_norm(V(random_tensor<double>(4, 8, rng, 3.0)), g, b).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 8; ++j) m += y(i, j) / 8;
    for (std::size_t j = 0; j < 8; ++j) v += (y(i, j) - m) * (y(i, j) - m) / 8;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("cross entropy against a direct log-sum-exp") {
  const auto logits = Tensor<double>::from_rows({{1.0, 2.0, 3.0}, {0.5, -1.0, 0.0}});
  const std::vector<std::size_t> targets{2, 0}, positions{0, 1};
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double l1 = std::log(std::exp(0.5) + std::exp(-1.0) + 1.0) - 0.5;
  const auto ce = cross_entropy(V(logits), std::span<const std::size_t>(targets), std::span<const std::size_t>(positions));
  CHECK(ce.item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(cross_entropy(V(logits), std::span<const std::size_t>(targets), std::span<const std::size_t>(none)),
                  DegenerateBatchError);
  const std::vector<std::size_t> far{7, 0};
  CHECK_THROWS_AS(cross_entropy(V(logits), std::span<const std::size_t>(far), std::span<const std::size_t>(positions)),
                  DimensionError);
}

TEST_CASE("x*x has gradient 2x") {
  P x("x", Tensor<double>::from_rows({{3.0}}));
  RecordScope rec(true);
  backward(sum(hadamard(x.var(), x.var())));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("shared subexpressions are visited once") {
  P x("x", Tensor<double>::from_rows({{1.0, 2.0}}));
  RecordScope rec(true);
  const V y = silu(x.var());
  const V z = add(y, y);
  const auto stats = backward(sum(z));
  CHECK(stats.nodes_visited == 4);  // sum, add, silu, x
  CHECK(x.grad()[0] == doctest::Approx(2 * silu_derivative(1.0)));
}

TEST_CASE("backward errors") {
  P x("x", Tensor<double>::from_rows({{1.0, 2.0}}));
  RecordScope rec(true);
  CHECK_THROWS_AS(backward(x.var()), GraphError);  // not a scalar
  CHECK_THROWS_AS(backward(sum(V(Tensor<double>::matrix(2, 2)))), GraphError);  // nothing trainable
  const V loss = sum(silu(x.var()));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), GraphError);
}

TEST_CASE("no graph is recorded outside a RecordScope") {
  P x("x", Tensor<double>::from_rows({{1.0}}));
  const V y = sum(x.var());
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(backward(y), GraphError);
}

TEST_CASE("frozen parameters receive no gradient") {
  P w("w", Tensor<double>::from_rows({{2.0}}), false);
  P x("x", Tensor<double>::from_rows({{3.0}}));
  RecordScope rec(true);
  backward(sum(matmul(x.var(), w.var())));
  CHECK(x.grad()[0] == 2.0);
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("a constant mask gets no gradient and scales the upstream one") {
  P a("a", Tensor<double>::from_rows({{1.0, 2.0}}));
  const auto mask = Tensor<double>::from_rows({{0.5, 0.25}});
  RecordScope rec(true);
  backward(sum(hadamard(a.var(), mask)));
  CHECK(a.grad()[0] == 0.5);
  CHECK(a.grad()[1] == 0.25);
}

TEST_CASE("parameter gradients accumulate until zero_grad") {
  P x("x", Tensor<double>::from_rows({{1.0}}));
  RecordScope rec(true);
  backward(scale(sum(x.var()), 3.0));
  backward(scale(sum(x.var()), 3.0));
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("parameter copies are deep") {
  P x("x", Tensor<double>::from_rows({{1.0}}));
  P y = x;
  y.value()[0] = 5.0;
  CHECK(x.value()[0] == 1.0);
}

TEST_CASE("gradcheck property: every op on random shapes") {
  SplitMix64 shapes(11);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t m = 1 + shapes.below(4), k = 1 + shapes.below(4), n = 1 + shapes.below(4);
    SplitMix64 rng(derive_seed(99, trial, 0));
    P a("a", random_tensor<double>(m, k, rng)), b("b", random_tensor<double>(k, n, rng));
    P c("c", random_tensor<double>(m, k, rng)), row("row", random_tensor<double>(1, k, rng));
    P g("g", random_tensor<double>(1, k, rng)), bias("bias", random_tensor<double>(1, k, rng));
    const std::vector<std::size_t> idx{0, m - 1, 0};
    auto f = [&] {
      V x = add(hadamard(silu(a.var()), c.var()), scale(a.var(), 0.3));
      x = add_row(x, row.var());
      V sq = matmul(x, transpose(x));  // m x m
      V s = softmax_rows(sq);
      V h = k > 1 ? layer_norm(x, g.var(), bias.var()) : x;
      V y = matmul(concat_rows(std::vector<V>{h, gather_rows(x, std::span<const std::size_t>(idx))}), b.var());
      V d = matmul(causal_softmax_rows(sq), matmul(x, diag(g.var())));
      return add(add(weighted(s, trial), weighted(y, trial + 100)), weighted(d, trial + 200));
    };
    const auto report = finite_diff_check(f, {&a, &b, &c, &row, &g, &bias});
    INFO("trial " << trial << " worst " << report.worst_param);
    CHECK(report.max_rel_error <= 1e-6);
  }
}

TEST_CASE("gradcheck catches a corrupted SiLU derivative and names the parameter") {
  SplitMix64 rng(1);
  P a("victim", random_tensor<double>(3, 3, rng)), b("bystander", random_tensor<double>(3, 3, rng));
  auto f = [&] { return add(weighted(silu(a.var()), 1), weighted(b.var(), 2)); };
  CHECK(finite_diff_check(f, {&a, &b}).passed(1e-5));
  testing::ScopedSiluFault fault;
  const auto report = finite_diff_check(f, {&a, &b});
  CHECK_FALSE(report.passed(1e-5));
  CHECK(report.worst_param == "victim");
  CHECK(report.params[1].max_rel_error < 1e-8);
}

TEST_CASE("gradcheck refuses a non-deterministic closure") {
  P a("a", Tensor<double>::from_rows({{1.0}}));
  int calls = 0;
  auto f = [&] { return add(sum(a.var()), V(Tensor<double>::scalar(static_cast<double>(calls++)))); };
  CHECK_THROWS_AS(finite_diff_check(f, {&a}), OracleInvalidError);
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-13, 0.0) == doctest::Approx(0.1));
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
}
