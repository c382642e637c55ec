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
#include <stdexcept>
#include <string>
#include <vector>

#include "semrel/autodiff.hpp"

namespace semrel {

class OracleInvalidError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParameterCheck {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<ParameterCheck> params;

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

// Central-difference oracle. `forward` must rebuild the graph from the current
// parameter values on every call and return a scalar loss.
inline GradcheckReport finite_diff_check(const std::function<Var<double>()>& forward,
                                         const std::vector<Parameter<double>*>& params, double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    RecordScope record(true);
    backward(forward());
  }
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad());

  auto eval = [&] {
    RecordScope off(false);
    return forward().item();
  };
  const double base_a = eval();
  const double base_b = eval();
  if (base_a != base_b)
    throw OracleInvalidError("finite_diff_check: forward is not deterministic (" + std::to_string(base_a) +
                             " vs " + std::to_string(base_b) + ")");

  GradcheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value();
    ParameterCheck check;
    check.name = params[k]->name();
    check.entries = value.numel();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = eval();
      value[i] = saved - eps;
      const double down = eval();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[k][i], numeric);
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic_at_worst = analytic[k][i];
        check.numeric_at_worst = numeric;
      }
    }
    if (check.max_rel_error > report.max_rel_error || report.worst_param.empty()) {
      report.max_rel_error = check.max_rel_error;
      report.worst_param = check.name;
      report.worst_index = check.worst_index;
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace semrel
