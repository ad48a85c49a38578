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

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "refseg/numeric/params.hpp"

namespace refseg {

/// Evaluates a scalar loss at the current parameter values. When grads is
/// non-null it must also be filled with the implementation gradient (one
/// matrix per parameter, aligned with the store).
using LossFunction =
    std::function<double(const ParamStore&, std::vector<Matrix>* grads)>;

struct GradCheckMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double tol = 0.0;
  double loss = 0.0;
  double floor = 0.0;        // |analytic| threshold of the relative test
  std::size_t checked = 0;   // coordinates tested relatively
  std::size_t below_floor = 0;  // coordinates tested absolutely
  std::size_t abs_failures = 0;
  double max_rel_error = 0.0;
  double max_abs_error_below_floor = 0.0;
  /// Relative error over every coordinate with |analytic| > 1e-8, floor
  /// aside; informational.
  double max_rel_error_unfloored = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<GradCheckMismatch> mismatches;  // first few failures
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double analytic_floor = 1e-8;
  /// When positive, the floor is raised to the finite-difference
  /// resolution c * eps_mach * max(1, |L|) / (step * tol): below it the
  /// central difference cannot resolve a relative error of tol, so those
  /// coordinates must instead satisfy |a - n| <= tol * floor.
  double resolution_factor = 0.0;
};

/// Central finite differences (f(x + h) - f(x - h)) / 2h over every
/// trainable coordinate. Relative error is |a - n| / max(|a|, |n|).
GradCheckReport grad_check(const LossFunction& f, ParamStore& params,
                           double tol, const GradCheckOptions& options = {});

}  // namespace refseg
