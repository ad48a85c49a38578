// Copyright 2026 The refseg3d Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "refseg/numeric/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refseg/error.hpp"

namespace refseg {

namespace {

double finite_or_throw(double v) {
  require(std::isfinite(v), "grad_check: loss is not finite",
          ErrorKind::kNumeric);
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossFunction& f, ParamStore& params,
                           double tol, const GradCheckOptions& options) {
  require(tol > 0 && options.step > 0, "grad_check: tol and step must be positive");
  const double h = options.step;
  GradCheckReport report;
  report.tol = tol;
  std::vector<Matrix> grads;
  report.loss = finite_or_throw(f(params, &grads));
  require(grads.size() == params.size(),
          "grad_check: gradient list does not match parameter store");
  report.floor = options.analytic_floor;
  if (options.resolution_factor > 0)
    report.floor = std::max(report.floor, options.resolution_factor *
                                              std::numeric_limits<double>::epsilon() *
                                              std::max(1.0, std::abs(report.loss)) /
                                              (h * tol));

  for (ParamId id = 0; id < params.size(); ++id) {
    Param& p = params[id];
    if (!p.trainable) continue;
    require(grads[id].same_shape(p.value),
            "grad_check: gradient shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = finite_or_throw(f(params, nullptr));
      p.value[i] = saved - h;
      const double down = finite_or_throw(f(params, nullptr));
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[id][i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-300});
      if (std::abs(analytic) > 1e-8)
        report.max_rel_error_unfloored = std::max(report.max_rel_error_unfloored, rel);
      if (std::abs(analytic) <= report.floor) {
        ++report.below_floor;
        report.max_abs_error_below_floor =
            std::max(report.max_abs_error_below_floor, abs_err);
        if (abs_err > tol * report.floor) {
          ++report.abs_failures;
          if (report.mismatches.size() < 16)
            report.mismatches.push_back({p.name, i, analytic, numeric, rel});
        }
        continue;
      }
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
      if (rel > tol && report.mismatches.size() < 16)
        report.mismatches.push_back({p.name, i, analytic, numeric, rel});
    }
  }
  report.passed = report.max_rel_error <= tol && report.abs_failures == 0;
  return report;
}

}  // namespace refseg
