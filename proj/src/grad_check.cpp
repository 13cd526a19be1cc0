// Copyright 2026 The relattr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <sstream>

#include "relattr/nd.hpp"

namespace relattr::nd {

namespace {

double evaluate(const ScalarFunction& f) {
  Tape tape;
  Var out = f(tape);
  return out.scalar();
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f,
                           const std::vector<Tensor2*>& inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (Tensor2* t : inputs) {
    if (t == nullptr) throw std::invalid_argument("grad_check: null input");
    t->requires_grad = true;
    t->zero_grad();
  }

  double base = 0.0;
  {
    Tape tape;
    Var out = f(tape);
    base = out.scalar();
    tape.backward(out);
  }
  if (evaluate(f) != base) {
    throw std::invalid_argument(
        "grad_check: function is not deterministic (dropout in train mode?)");
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor2& t = *inputs[k];
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double saved = t.value(r, c);
        t.value(r, c) = saved + eps;
        const double plus = evaluate(f);
        t.value(r, c) = saved - eps;
        const double minus = evaluate(f);
        t.value(r, c) = saved;

        const double numeric = (plus - minus) / (2.0 * eps);
        const double analytic = t.grad(r, c);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        ++result.coordinates;
        if (rel > result.max_rel_error || result.worst.empty()) {
          result.max_rel_error = std::max(rel, result.max_rel_error);
          std::ostringstream os;
          os << k << "[" << r << "," << c << "]";
          result.worst = os.str();
          result.worst_analytic = analytic;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace relattr::nd
