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

#include <set>

#include "semrel/gradcheck.hpp"
#include "semrel/inheritable_attention.hpp"
#include "support.hpp"

using namespace semrel;
using semrel::test::random_tensor;

namespace {

CrossAttnParams<double> positions(Tensor<double> p1, Tensor<double> p2) {
  CrossAttnParams<double> p;
  p.p1 = Parameter<double>("p1", std::move(p1));
  p.p2 = Parameter<double>("p2", std::move(p2));
  return p;
}

InheritableState<double> one_row_state(double delta, double lambda) {
  return reset_state<double>(1, 4, delta, lambda, true);
}

const Tensor<double> kRow = Tensor<double>::from_rows({{0.1, 0.5, -0.2, 0.9}});

}  // namespace

TEST_CASE("form_qkv examples") {
  const auto p = positions(Tensor<double>::from_rows({{0.5}}), Tensor<double>::from_rows({{-1.0}}));
  const auto qkv = form_qkv(Var<double>(Tensor<double>::from_rows({{1.0}})),
                            Var<double>(Tensor<double>::from_rows({{2.0}})), p);
  CHECK(qkv.q.item() == 1.0);
  CHECK(qkv.k.item() == 2.5);
  CHECK(qkv.v.item() == 1.0);

  SplitMix64 rng(1);
  const auto xv = random_tensor<double>(3, 2, rng);
  const auto zero = positions(Tensor<double>::matrix(3, 2), Tensor<double>::matrix(3, 2));
  const auto z = form_qkv(Var<double>(random_tensor<double>(2, 2, rng)), Var<double>(xv), zero);
  CHECK(z.k.value() == xv);
  CHECK(z.v.value() == xv);
  const auto rp = positions(random_tensor<double>(3, 2, rng), random_tensor<double>(3, 2, rng));
  const auto w = form_qkv(Var<double>(random_tensor<double>(2, 2, rng)), Var<double>(Tensor<double>::matrix(3, 2)), rp);
  CHECK(w.k.value() == rp.p1.value());
  CHECK(w.v.value() == rp.p2.value());
  CHECK_THROWS_AS(form_qkv(Var<double>(Tensor<double>::matrix(2, 3)), Var<double>(xv), zero), DimensionError);
  CHECK_THROWS_AS(form_qkv(Var<double>(Tensor<double>::matrix(2, 2)), Var<double>(Tensor<double>::matrix(4, 2)), zero),
                  DimensionError);
}

TEST_CASE("attention scores are SiLU of raw dot products") {
  CHECK(attention_scores(Var<double>(Tensor<double>::from_rows({{1.0}})), Var<double>(Tensor<double>::from_rows({{1.0}})))
            .item() == doctest::Approx(0.7310586).epsilon(1e-7));
  const auto a = attention_scores(Var<double>(Tensor<double>::from_rows({{1.0, 0.0}})),
                                  Var<double>(Tensor<double>::from_rows({{0.0, 3.0}, {0.0, -2.0}})));
  CHECK(a.value() == Tensor<double>::matrix(1, 2));
  SplitMix64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const std::size_t nt = 1 + rng.below(6), nv = 1 + rng.below(6);
    const auto s = attention_scores(Var<double>(random_tensor<double>(nt, 3, rng)), Var<double>(random_tensor<double>(nv, 3, rng)));
    CHECK(s.shape() == Shape{nt, nv});
  }
  CHECK_THROWS_AS(attention_scores(Var<double>(Tensor<double>::matrix(1, 2)), Var<double>(Tensor<double>::matrix(1, 3))),
                  DimensionError);
}

TEST_CASE("update rule worked example") {
  auto st = one_row_state(0.3, 0.85);
  CHECK(st.decays_per_row() == 1);
  update_mask(st, kRow);
  CHECK(st.m == Tensor<double>::from_rows({{1, 1, 0.85, 1}}));
  update_mask(st, kRow);
  CHECK(st.m == Tensor<double>::from_rows({{1, 1, 0.85 * 0.85, 1}}));
  // In binary64 the product of two 0.85s is 0.7224999999999999, not the
  // decimal literal; binary32 lands on the literal exactly.
  auto f32 = reset_state<float>(1, 4, 0.3, 0.85, true);
  const Tensor<float> row32 = kRow.cast<float>();
  update_mask(f32, row32);
  update_mask(f32, row32);
  CHECK(f32.m == Tensor<float>::from_rows({{1.0f, 1.0f, 0.7225f, 1.0f}}));

  auto half = one_row_state(0.5, 0.85);
  update_mask(half, kRow);
  CHECK(half.m == Tensor<double>::from_rows({{0.85, 1, 0.85, 1}}));
}

TEST_CASE("update rule edge cases") {
  auto zero = one_row_state(0.0, 0.85);
  update_mask(zero, kRow);
  CHECK(zero.m == Tensor<double>::matrix(1, 4, 1.0));

  auto off = reset_state<double>(1, 4, 0.3, 0.85, false);
  update_mask(off, kRow);
  CHECK(off.m == Tensor<double>::matrix(1, 4, 1.0));

  auto ties = reset_state<double>(1, 4, 0.5, 0.5, true);
  update_mask(ties, Tensor<double>::matrix(1, 4, 0.2));
  CHECK(ties.m == Tensor<double>::from_rows({{0.5, 0.5, 1, 1}}));

  // 0.29 * 100 evaluates to 28.999...; the floor still gives 29.
  auto wide = reset_state<double>(1, 100, 0.29, 0.85, true);
  CHECK(wide.decays_per_row() == 29);

  CHECK_THROWS_AS(reset_state<double>(1, 4, 1.0, 0.85, true), std::invalid_argument);
  CHECK_THROWS_AS(reset_state<double>(1, 4, -0.1, 0.85, true), std::invalid_argument);
  CHECK_THROWS_AS(reset_state<double>(1, 4, 0.3, 0.0, true), std::invalid_argument);
  CHECK_THROWS_AS(reset_state<double>(1, 4, 0.3, 1.5, true), std::invalid_argument);
  auto st = one_row_state(0.3, 0.85);
  CHECK_THROWS_AS(update_mask(st, Tensor<double>::matrix(2, 4)), DimensionError);
}

TEST_CASE("reset gives all ones for any shape") {
  SplitMix64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto st = reset_state<float>(1 + rng.below(9), 1 + rng.below(9), 0.3, 0.85, true);
    for (float v : st.m.data()) CHECK(v == 1.0f);
  }
}

TEST_CASE("property: mask lattice, per-row counts and monotonicity") {
  SplitMix64 rng(4);
  const double lambda = 0.85, delta = 0.3;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nt = 1 + rng.below(6), nv = 1 + rng.below(20), layers = 1 + rng.below(6);
    auto st = reset_state<double>(nt, nv, delta, lambda, true);
    const std::size_t k = static_cast<std::size_t>(std::floor(delta * static_cast<double>(nv) + 1e-9));
    for (std::size_t l = 1; l <= layers; ++l) {
      const auto before = st.m;
      update_mask(st, random_tensor<double>(nt, nv, rng));
      for (std::size_t i = 0; i < nt; ++i) {
        std::size_t decayed = 0;
        for (std::size_t j = 0; j < nv; ++j) {
          const double v = st.m(i, j);
          CHECK(v <= before(i, j));
          decayed += v < before(i, j);
          // Lattice points as repeated products, the way decays accumulate.
          bool on_lattice = false;
          double point = 1.0;
          for (std::size_t p = 0; p <= l; ++p, point *= lambda) on_lattice |= v == point;
          CHECK(on_lattice);
        }
        CHECK(decayed == k);
      }
    }
    for (double v : st.m.data()) CHECK(v >= std::pow(lambda, static_cast<double>(layers)) - 1e-15);
  }
}

TEST_CASE("fused attention") {
  const Var<double> alpha(Tensor<double>::from_rows({{0.7310586}}));
  const Var<double> v(Tensor<double>::from_rows({{2.0}}));
  InheritableState<double> st{Tensor<double>::from_rows({{0.85}}), 0.3, 0.85, true};
  CHECK(fused_attention(alpha, st, v).item() == doctest::Approx(1.2428).epsilon(1e-4));
  CHECK(fused_attention(alpha, st, v).item() == 0.85 * 0.7310586 * 2.0);

  SplitMix64 rng(5);
  const Var<double> a(random_tensor<double>(3, 5, rng)), vv(random_tensor<double>(5, 4, rng));
  const auto ones = reset_state<double>(3, 5, 0.3, 0.85, true);
  CHECK(fused_attention(a, ones, vv).value() == baseline_attention(a, vv).value());
  InheritableState<double> zeros{Tensor<double>::matrix(3, 5), 0.3, 0.85, true};
  CHECK(fused_attention(a, zeros, vv).value() == Tensor<double>::matrix(3, 4));
}

TEST_CASE("suppression applies within the layer that computed alpha") {
  // Scores from this layer must select the decayed entry before it is used.
  const Var<double> alpha(kRow);
  const Var<double> v(Tensor<double>::from_rows({{1}, {1}, {1}, {1}}));
  auto st = one_row_state(0.3, 0.85);
  update_mask(st, alpha.value());
  const double expected = 0.1 + 0.5 + 0.85 * -0.2 + 0.9;
  CHECK(fused_attention(alpha, st, v).item() == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("gradients treat the mask as a constant") {
  SplitMix64 rng(6);
  Parameter<double> xt("xt", random_tensor<double>(3, 4, rng)), xv("xv", random_tensor<double>(6, 4, rng));
  auto pos = positions(random_tensor<double>(6, 4, rng, 0.3), random_tensor<double>(6, 4, rng, 0.3));
  const auto probe = random_tensor<double>(3, 4, rng);
  auto f = [&] {
    const auto qkv = form_qkv(xt.var(), xv.var(), pos);
    const auto alpha = attention_scores(qkv.q, qkv.k);
    auto st = reset_state<double>(3, 6, 0.5, 0.85, true);
    update_mask(st, alpha.value());
    update_mask(st, alpha.value());
    return sum(hadamard(fused_attention(alpha, st, qkv.v), probe));
  };
  const auto report = finite_diff_check(f, {&xt, &xv, &pos.p1, &pos.p2});
  CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("mask sparsity") {
  CHECK(mask_sparsity(Tensor<double>::matrix(2, 2, 1.0)) == 0.0);
  CHECK(mask_sparsity(Tensor<double>::from_rows({{1, 0.85}, {0.7, 1}})) == 0.5);
}

TEST_CASE("heatmap export mapping and files") {
  CHECK(heatmap_level(1.0, 0.85, 4) == 255);
  CHECK(heatmap_level(std::pow(0.85, 4), 0.85, 4) == 0);
  const double floor4 = std::pow(0.85, 4);
  CHECK(heatmap_level(0.85, 0.85, 4) == static_cast<int>(std::round(255 * (0.85 - floor4) / (1 - floor4))));
  CHECK(heatmap_level(0.0, 0.85, 4) == 0);
  CHECK(heatmap_level(0.5, 1.0, 4) == 255);

  test::TempDir dir("pgm");
  const auto m = Tensor<double>::from_rows({{1, 0.85, 0.7225}, {1, 1, 1}});
  write_mask_pgm(m, 0.85, 2, dir / "m.pgm");
  write_mask_csv(m, dir / "m.csv");
  const auto bytes = test::slurp(dir / "m.pgm");
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size()]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0);
  const auto csv = test::slurp(dir / "m.csv");
  CHECK(std::string(csv.begin(), csv.end()) == "1,0.85,0.7225\n1,1,1\n");
}
