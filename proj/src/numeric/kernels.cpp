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

#include "refseg/numeric/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refseg/error.hpp"

namespace refseg {

namespace {

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

}  // namespace

Matrix softmax(const Matrix& x, Axis axis) {
  if (axis == Axis::kRows) return transpose(softmax(transpose(x), Axis::kCols));
  require(x.cols() > 0 && x.rows() > 0, "softmax: empty axis");
  require(x.all_finite(), "softmax: non-finite input", ErrorKind::kNumeric);
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i));
  return out;
}

GumbelSoftmaxResult gumbel_softmax(const Matrix& logits, const Matrix& noise,
                                   double temperature, bool hard) {
  require(temperature > 0.0, "gumbel_softmax: temperature must be positive");
  require(logits.same_shape(noise), "gumbel_softmax: noise shape mismatch");
  Matrix z(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = (logits[i] + noise[i]) / temperature;
  GumbelSoftmaxResult r;
  r.soft = softmax(z, Axis::kCols);
  if (!hard) {
    r.output = r.soft;
    return r;
  }
  r.output = Matrix(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = r.soft.row(i);
    auto best = static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    r.output(i, best) = 1.0;
  }
  return r;
}

GumbelSoftmaxResult gumbel_softmax(const Matrix& logits, double temperature,
                                   bool hard, Rng& rng) {
  require(temperature > 0.0, "gumbel_softmax: temperature must be positive");
  return gumbel_softmax(logits, rng.gumbel_matrix(logits.rows(), logits.cols()),
                        temperature, hard);
}

Matrix scaled_dot(const Matrix& q, const Matrix& k, std::size_t d) {
  require(q.cols() == d && k.cols() == d,
          "scaled_dot: expected " + std::to_string(d) + " columns, got " +
              q.shape_string() + " and " + k.shape_string());
  Matrix s = matmul_nt(q, k);
  s *= 1.0 / std::sqrt(static_cast<double>(d));
  return s;
}

AttentionResult attention_block(const Matrix& q, const Matrix& k,
                                const Matrix& v,
                                const std::optional<Matrix>& mask) {
  require(k.rows() == v.rows(), "attention_block: key/value count mismatch");
  require(k.rows() > 0, "attention_block: no keys");
  if (mask)
    require(mask->rows() == q.rows() && mask->cols() == k.rows(),
            "attention_block: mask shape mismatch");
  Matrix logits = scaled_dot(q, k, q.cols());
  AttentionResult r;
  r.fully_masked.assign(q.rows(), false);
  Matrix weights(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.cols(); ++j)
      if (!mask || (*mask)(i, j) != 0.0) mx = std::max(mx, logits(i, j));
    if (!std::isfinite(mx)) {
      r.fully_masked[i] = true;
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      if (mask && (*mask)(i, j) == 0.0) continue;
      weights(i, j) = std::exp(logits(i, j) - mx);
      sum += weights(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) weights(i, j) /= sum;
  }
  r.output = matmul(weights, v);
  return r;
}

}  // namespace refseg
