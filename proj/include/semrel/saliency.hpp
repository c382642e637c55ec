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
#include <limits>
#include <vector>

#include "semrel/tensor.hpp"

namespace semrel {

// Per-patch attention intensity: the maximum entry of each projected row.
template <typename T>
std::vector<double> extract_patch_saliency(const Tensor<T>& projected) {
  require_matrix(projected.shape(), "extract_patch_saliency");
  std::vector<double> out(projected.rows());
  for (std::size_t i = 0; i < projected.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < projected.cols(); ++j) mx = std::max(mx, static_cast<double>(projected(i, j)));
    out[i] = mx;
  }
  return out;
}

// Spread of a saliency map: Shannon entropy (nats) of |s_i| / sum |s|. An
// all-zero map counts as uniform.
inline double saliency_entropy(const std::vector<double>& saliency) {
  double total = 0.0;
  for (double s : saliency) total += std::abs(s);
  if (total == 0.0) return std::log(static_cast<double>(saliency.size()));
  double h = 0.0;
  for (double s : saliency) {
    const double p = std::abs(s) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace semrel
