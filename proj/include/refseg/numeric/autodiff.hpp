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

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "refseg/numeric/matrix.hpp"

namespace refseg::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  int id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  /// Scalar value of a 1x1 node.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over matrix-valued nodes. Nodes are appended in
/// evaluation order; backward() walks them in reverse and calls each
/// node's adjoint with its accumulated output gradient.
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Append a computed node. requires_grad is the OR over its inputs.
  Var record(Matrix value, bool requires_grad, Adjoint adjoint);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Gradient accumulated for a node; zeros if nothing reached it.
  Matrix grad(Var v) const;
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }
  /// Mutable accumulator for adjoint implementations (allocated on demand).
  Matrix& grad_ref(int id);
  const Matrix& out_grad(int id) const { return nodes_[id].grad; }

  /// Seed d(root)/d(root) = 1 for a 1x1 root and propagate.
  void backward(Var root);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Adjoint adjoint;
  };
  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // element-wise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x (n x d) + row (1 x d) broadcast over rows.
Var add_row(Var x, Var row);
/// x * w^T + bias, w is out x in, bias 1 x out (may be invalid for none).
Var linear(Var x, Var w, Var bias);
Var transpose(Var a);

// Point-wise.
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var log(Var a);

// Row-wise normalizers.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Gumbel-Softmax over each row with constant noise; with hard the forward
/// value is the one-hot argmax and the backward pass uses the soft path.
Var gumbel_softmax_rows(Var logits, const Matrix& noise, double temperature,
                        bool hard);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Divide each row by max(||row||, eps).
Var normalize_rows(Var a, double eps = 1e-12);

// Structural.
Var gather_rows(Var a, std::span<const std::size_t> idx);
/// groups is row-major (num_groups x k) indices into a's rows.
Var group_max(Var a, std::span<const std::size_t> groups, std::size_t k);
Var group_sum(Var a, std::span<const std::size_t> groups, std::size_t k);
/// out_i = sum_j weights[i*k + j] * a[idx[i*k + j]].
Var interpolate(Var a, std::span<const std::size_t> idx,
                std::span<const double> weights, std::size_t k);
Var concat_rows(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var repeat_rows(Var row, std::size_t n);

// Reductions.
Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // 1 x cols
Var max_rows(Var a);   // 1 x cols
Var pick(Var a, std::size_t r, std::size_t c);
Var row(Var a, std::size_t r);

// Segmentation losses on a 1 x N logit row.
/// Mean binary cross-entropy with logits, computed in the overflow-free
/// form max(x,0) - x*y + log(1 + exp(-|x|)).
Var bce_with_logits(Var logits, std::span<const double> target);
/// 1 - (2 sum(p*g) + s) / (sum(p) + sum(g) + s), p = sigmoid(logits).
Var dice_with_logits(Var logits, std::span<const double> target,
                     double smooth = 1.0);

}  // namespace refseg::ad
