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

#include <optional>
#include <vector>

#include "refseg/numeric/matrix.hpp"
#include "refseg/numeric/rng.hpp"

namespace refseg {

enum class Axis { kRows, kCols };

/// Max-subtracted softmax. kCols normalizes each row across its columns,
/// kRows normalizes each column across its rows.
Matrix softmax(const Matrix& x, Axis axis = Axis::kCols);

struct GumbelSoftmaxResult {
  Matrix soft;    // softmax((logits + noise) / temperature), row-wise
  Matrix output;  // one-hot of the soft argmax if hard, otherwise == soft
};

/// Row-wise Gumbel-Softmax with caller-provided noise (same shape as
/// logits). Hard mode argmax ties go to the lowest column.
GumbelSoftmaxResult gumbel_softmax(const Matrix& logits, const Matrix& noise,
                                   double temperature, bool hard);
GumbelSoftmaxResult gumbel_softmax(const Matrix& logits, double temperature,
                                   bool hard, Rng& rng);

/// q k^T / sqrt(d); both operands must have exactly d columns.
Matrix scaled_dot(const Matrix& q, const Matrix& k, std::size_t d);

struct AttentionResult {
  Matrix output;
  /// Rows whose keys were all masked out; their output row is zero.
  std::vector<bool> fully_masked;
};

/// softmax(q k^T / sqrt(d)) v. mask(i, j) != 0 keeps key j for query i.
AttentionResult attention_block(const Matrix& q, const Matrix& k,
                                const Matrix& v,
                                const std::optional<Matrix>& mask = {});

}  // namespace refseg
