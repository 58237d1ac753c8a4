// Copyright 2026 The edit3k Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "edit3k/autodiff.hpp"

namespace edit3k {

/// Relative error used by every gradient comparison in the project.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  BasicTensor<double> analytic;
  BasicTensor<double> numeric;
};

/// Compares the tape gradient of a scalar function against central
/// differences. `f` is invoked as f(Graph<double>&, Var<double>) and must
/// return a one-element Var; everything is evaluated in 64-bit.
template <typename F>
GradCheckResult grad_check_detailed(F&& f, const BasicTensor<double>& x,
                                    double eps = 1e-3) {
  auto eval = [&](const BasicTensor<double>& at) {
    ad::Graph<double> g(false);
    auto out = f(g, g.constant(at));
    if (out.value().size() != 1) {
      throw std::invalid_argument("grad_check: function is not scalar-valued");
    }
    return out.value()[0];
  };

  GradCheckResult res;
  {
    ad::Graph<double> g;
    auto xv = g.leaf(x);
    auto out = f(g, xv);
    if (out.value().size() != 1) {
      throw std::invalid_argument("grad_check: function is not scalar-valued");
    }
    g.backward(out);
    res.analytic = g.grad(xv);
  }
  res.numeric = BasicTensor<double>(x.shape());
  BasicTensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    res.numeric[i] = (fp - fm) / (2 * eps);
    const double rel = relative_error(res.analytic[i], res.numeric[i]);
    res.max_abs_error = std::max(res.max_abs_error, std::abs(res.analytic[i] - res.numeric[i]));
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
    }
  }
  return res;
}

template <typename F>
double grad_check(F&& f, const BasicTensor<double>& x, double eps = 1e-3) {
  return grad_check_detailed(std::forward<F>(f), x, eps).max_rel_error;
}

template <typename F>
double grad_check(F&& f, const BasicTensor<float>& x, double eps = 1e-3) {
  return grad_check_detailed(std::forward<F>(f), x.template cast<double>(), eps)
      .max_rel_error;
}

}  // namespace edit3k
