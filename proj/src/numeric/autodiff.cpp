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

#include "refseg/numeric/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "refseg/error.hpp"
#include "refseg/numeric/kernels.hpp"

namespace refseg::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  require(value().size() == 1, "Var::item: node is " + value().shape_string());
  return value()[0];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, bool requires_grad, Adjoint adjoint) {
  if (!requires_grad) adjoint = nullptr;
  nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(adjoint)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty())
    n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  require(root.tape() == this, "Tape::backward: foreign node");
  require(value(root.id()).size() == 1, "Tape::backward: root must be 1x1");
  grad_ref(root.id())[0] += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.adjoint && !n.grad.empty()) n.adjoint(*this, id);
  }
}

namespace {

Tape& tape_of(Var a) {
  require(a.valid(), "autodiff: invalid node");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(),
          "autodiff: operands live on different tapes");
  return *a.tape();
}

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.valid() && t.requires_grad(v)) return true;
  return false;
}

void accumulate(Tape& t, int id, const Matrix& g) {
  if (t.requires_grad(id)) t.grad_ref(id) += g;
}

Matrix column_sums(const Matrix& g) {
  Matrix s(1, g.cols());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) s[j] += g(i, j);
  return s;
}

// Unary point-wise op with derivative computed from (input, output).
template <typename F, typename D>
Var pointwise(Var a, F f, D df) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia, df](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    const Matrix& x = tp.value(ia);
                    const Matrix& y = tp.value(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ga[i] += g[i] * df(x[i], y[i]);
                  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_same(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()),
          std::string(op) + ": shape mismatch " + a.value().shape_string() +
              " vs " + b.value().shape_string());
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(refseg::matmul(a.value(), b.value()), any_grad(t, {a, b}),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    if (tp.requires_grad(ia))
                      tp.grad_ref(ia) += refseg::matmul_nt(g, tp.value(ib));
                    if (tp.requires_grad(ib))
                      tp.grad_ref(ib) += refseg::matmul_tn(tp.value(ia), g);
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(refseg::matmul_nt(a.value(), b.value()), any_grad(t, {a, b}),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    if (tp.requires_grad(ia))
                      tp.grad_ref(ia) += refseg::matmul(g, tp.value(ib));
                    if (tp.requires_grad(ib))
                      tp.grad_ref(ib) += refseg::matmul_tn(g, tp.value(ia));
                  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same(a, b, "add");
  Matrix out = a.value();
  out += b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    accumulate(tp, ia, g);
                    accumulate(tp, ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same(a, b, "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    accumulate(tp, ia, g);
                    if (tp.requires_grad(ib)) {
                      Matrix& gb = tp.grad_ref(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    }
                  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    if (tp.requires_grad(ia)) {
                      Matrix& ga = tp.grad_ref(ia);
                      const Matrix& vb = tp.value(ib);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * vb[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix& gb = tp.grad_ref(ib);
                      const Matrix& va = tp.value(ia);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        gb[i] += g[i] * va[i];
                    }
                  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  out *= s;
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia, s](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ga[i] += s * g[i];
                  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    tp.grad_ref(ia) += tp.out_grad(self);
                  });
}

Var add_row(Var x, Var r) {
  Tape& t = tape_of(x, r);
  require(r.rows() == 1 && r.cols() == x.cols(),
          "add_row: expected 1x" + std::to_string(x.cols()) + " row, got " +
              r.value().shape_string());
  Matrix out = x.value();
  const Matrix& rv = r.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  const int ix = x.id(), ir = r.id();
  return t.record(std::move(out), any_grad(t, {x, r}),
                  [ix, ir](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    accumulate(tp, ix, g);
                    if (tp.requires_grad(ir)) tp.grad_ref(ir) += column_sums(g);
                  });
}

Var linear(Var x, Var w, Var bias) {
  Tape& t = tape_of(x, w);
  require(x.cols() == w.cols(), "linear: input has " +
                                    std::to_string(x.cols()) +
                                    " features, weight is " +
                                    w.value().shape_string());
  Matrix out = refseg::matmul_nt(x.value(), w.value());
  const bool has_bias = bias.valid();
  if (has_bias) {
    require(bias.rows() == 1 && bias.cols() == w.rows(),
            "linear: bias shape mismatch");
    const Matrix& bv = bias.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  }
  const int ix = x.id(), iw = w.id(), ib = has_bias ? bias.id() : -1;
  const bool rg = any_grad(t, {x, w, bias});
  return t.record(std::move(out), rg, [ix, iw, ib](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    if (tp.requires_grad(ix)) tp.grad_ref(ix) += refseg::matmul(g, tp.value(iw));
    if (tp.requires_grad(iw))
      tp.grad_ref(iw) += refseg::matmul_tn(g, tp.value(ix));
    if (ib >= 0 && tp.requires_grad(ib)) tp.grad_ref(ib) += column_sums(g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(refseg::transpose(a.value()), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    tp.grad_ref(ia) += refseg::transpose(tp.out_grad(self));
                  });
}

Var relu(Var a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return pointwise(a, sigmoid_scalar,
                   [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return pointwise(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return sigmoid_scalar(x); });
}

Var log(Var a) {
  for (double v : a.value().values())
    require(v > 0.0, "log: non-positive input", ErrorKind::kNumeric);
  return pointwise(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(refseg::softmax(a.value(), Axis::kCols), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    const Matrix& y = tp.value(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        ga(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(x.cols() > 0, "log_softmax_rows: empty axis");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    const Matrix& y = tp.value(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      double gs = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
                    }
                  });
}

Var gumbel_softmax_rows(Var logits, const Matrix& noise, double temperature,
                        bool hard) {
  Tape& t = tape_of(logits);
  GumbelSoftmaxResult r =
      refseg::gumbel_softmax(logits.value(), noise, temperature, hard);
  const int ia = logits.id();
  return t.record(
      std::move(r.output), t.requires_grad(logits),
      [ia, soft = std::move(r.soft), temperature](Tape& tp, int self) {
        const Matrix& g = tp.out_grad(self);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < soft.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < soft.cols(); ++j)
            dot += g(i, j) * soft(i, j);
          for (std::size_t j = 0; j < soft.cols(); ++j)
            ga(i, j) += soft(i, j) * (g(i, j) - dot) / temperature;
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 &&
              bias.cols() == d,
          "layer_norm: affine parameter shape mismatch");
  Matrix xhat(n, d);
  std::vector<double> inv_std(n);
  Matrix out(n, d);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record(
      std::move(out), any_grad(t, {x, gain, bias}),
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tp, int self) {
        const Matrix& g = tp.out_grad(self);
        const std::size_t n = g.rows(), d = g.cols();
        const Matrix& gv = tp.value(ig);
        if (tp.requires_grad(ig)) {
          Matrix& gg = tp.grad_ref(ig);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g(i, j) * xhat(i, j);
        }
        if (tp.requires_grad(ib)) tp.grad_ref(ib) += column_sums(g);
        if (tp.requires_grad(ix)) {
          Matrix& gx = tp.grad_ref(ix);
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < n; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = g(i, j) * gv[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat(i, j);
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx(i, j) += inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
          }
        }
      });
}

Var normalize_rows(Var a, double eps) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
  }
  const int ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, norms = std::move(norms), eps](Tape& tp, int self) {
        const Matrix& g = tp.out_grad(self);
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < y.rows(); ++i) {
          if (norms[i] <= eps) {
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j) / eps;
            continue;
          }
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j)
            ga(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
        }
      });
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(refseg::gather_rows(a.value(), idx), t.requires_grad(a),
                  [ia, idx = std::vector<std::size_t>(idx.begin(), idx.end())](
                      Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    const std::size_t d = g.cols();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      double* dst = ga.row(idx[i]).data();
                      const double* src = g.row(i).data();
                      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                  });
}

Var group_max(Var a, std::span<const std::size_t> groups, std::size_t k) {
  Tape& t = tape_of(a);
  require(k > 0 && groups.size() % k == 0, "group_max: ragged groups");
  const Matrix& x = a.value();
  const std::size_t m = groups.size() / k, d = x.cols();
  Matrix out(m, d);
  std::vector<std::size_t> arg(m * d);
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = groups[g * k];
      require(best < x.rows(), "group_max: index out of range");
      for (std::size_t n = 1; n < k; ++n) {
        const std::size_t r = groups[g * k + n];
        require(r < x.rows(), "group_max: index out of range");
        if (x(r, j) > x(best, j)) best = r;
      }
      arg[g * d + j] = best;
      out(g, j) = x(best, j);
    }
  }
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia, arg = std::move(arg)](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    const std::size_t d = g.cols();
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t j = 0; j < d; ++j)
                        ga(arg[r * d + j], j) += g(r, j);
                  });
}

Var group_sum(Var a, std::span<const std::size_t> groups, std::size_t k) {
  Tape& t = tape_of(a);
  require(k > 0 && groups.size() % k == 0, "group_sum: ragged groups");
  const Matrix& x = a.value();
  const std::size_t m = groups.size() / k, d = x.cols();
  Matrix out(m, d);
  for (std::size_t g = 0; g < m; ++g)
    for (std::size_t n = 0; n < k; ++n) {
      const std::size_t r = groups[g * k + n];
      require(r < x.rows(), "group_sum: index out of range");
      for (std::size_t j = 0; j < d; ++j) out(g, j) += x(r, j);
    }
  const int ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, k, groups = std::vector<std::size_t>(groups.begin(), groups.end())](
          Tape& tp, int self) {
        const Matrix& g = tp.out_grad(self);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t n = 0; n < k; ++n)
            for (std::size_t j = 0; j < g.cols(); ++j)
              ga(groups[r * k + n], j) += g(r, j);
      });
}

Var interpolate(Var a, std::span<const std::size_t> idx,
                std::span<const double> weights, std::size_t k) {
  Tape& t = tape_of(a);
  require(k > 0 && idx.size() % k == 0 && weights.size() == idx.size(),
          "interpolate: inconsistent index/weight lists");
  const Matrix& x = a.value();
  const std::size_t n = idx.size() / k, d = x.cols();
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t r = idx[i * k + m];
      require(r < x.rows(), "interpolate: index out of range");
      const double w = weights[i * k + m];
      for (std::size_t j = 0; j < d; ++j) out(i, j) += w * x(r, j);
    }
  const int ia = a.id();
  return t.record(
      std::move(out), t.requires_grad(a),
      [ia, k, idx = std::vector<std::size_t>(idx.begin(), idx.end()),
       weights = std::vector<double>(weights.begin(), weights.end())](
          Tape& tp, int self) {
        const Matrix& g = tp.out_grad(self);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t m = 0; m < k; ++m) {
            const double w = weights[i * k + m];
            double* dst = ga.row(idx[i * k + m]).data();
            for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += w * g(i, j);
          }
      });
}

Var concat_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.cols(), "concat_rows: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy_n(a.value().data(), a.value().size(), out.data());
  std::copy_n(b.value().data(), b.value().size(), out.data() + a.value().size());
  const int ia = a.id(), ib = b.id();
  const std::size_t na = a.value().size();
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [ia, ib, na](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    if (tp.requires_grad(ia)) {
                      Matrix& ga = tp.grad_ref(ia);
                      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix& gb = tp.grad_ref(ib);
                      for (std::size_t i = 0; i < gb.size(); ++i)
                        gb[i] += g[na + i];
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require(p.tape() == &t && p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
    rg = rg || t.requires_grad(p);
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(n, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.row(i).data(), v.cols(), out.row(i).data() + off);
    off += v.cols();
  }
  return t.record(std::move(out), rg,
                  [ids = std::move(ids), widths = std::move(widths)](
                      Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (tp.requires_grad(ids[p])) {
                        Matrix& gp = tp.grad_ref(ids[p]);
                        for (std::size_t i = 0; i < g.rows(); ++i)
                          for (std::size_t j = 0; j < widths[p]; ++j)
                            gp(i, j) += g(i, off + j);
                      }
                      off += widths[p];
                    }
                  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(start + count <= x.cols(), "slice_cols: range out of bounds");
  Matrix out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.row(i).data() + start, count, out.row(i).data());
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia, start](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        ga(i, start + j) += g(i, j);
                  });
}

Var repeat_rows(Var r, std::size_t n) {
  Tape& t = tape_of(r);
  require(r.rows() == 1, "repeat_rows: expected a row vector");
  Matrix out(n, r.cols());
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(r.value().data(), r.cols(), out.row(i).data());
  const int ir = r.id();
  return t.record(std::move(out), t.requires_grad(r),
                  [ir](Tape& tp, int self) {
                    tp.grad_ref(ir) += column_sums(tp.out_grad(self));
                  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const int ia = a.id();
  return t.record(Matrix(1, 1, s), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    const double g = tp.out_grad(self)[0];
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(x.rows() > 0, "mean_rows: no rows");
  Matrix out = column_sums(x);
  out *= 1.0 / static_cast<double>(x.rows());
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    const double inv = 1.0 / static_cast<double>(ga.rows());
                    for (std::size_t i = 0; i < ga.rows(); ++i)
                      for (std::size_t j = 0; j < ga.cols(); ++j)
                        ga(i, j) += g[j] * inv;
                  });
}

Var max_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(x.rows() > 0, "max_rows: no rows");
  Matrix out(1, x.cols());
  std::vector<std::size_t> arg(x.cols(), 0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    for (std::size_t i = 1; i < x.rows(); ++i)
      if (x(i, j) > x(arg[j], j)) arg[j] = i;
    out[j] = x(arg[j], j);
  }
  const int ia = a.id();
  return t.record(std::move(out), t.requires_grad(a),
                  [ia, arg = std::move(arg)](Tape& tp, int self) {
                    const Matrix& g = tp.out_grad(self);
                    Matrix& ga = tp.grad_ref(ia);
                    for (std::size_t j = 0; j < arg.size(); ++j)
                      ga(arg[j], j) += g[j];
                  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  Tape& t = tape_of(a);
  require(r < a.rows() && c < a.cols(), "pick: index out of range");
  const int ia = a.id();
  return t.record(Matrix(1, 1, a.value()(r, c)), t.requires_grad(a),
                  [ia, r, c](Tape& tp, int self) {
                    tp.grad_ref(ia)(r, c) += tp.out_grad(self)[0];
                  });
}

Var row(Var a, std::size_t r) {
  const std::size_t idx[] = {r};
  return gather_rows(a, idx);
}

Var bce_with_logits(Var logits, std::span<const double> target) {
  Tape& t = tape_of(logits);
  const Matrix& x = logits.value();
  require(x.size() == target.size() && !target.empty(),
          "bce_with_logits: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += std::max(x[i], 0.0) - x[i] * target[i] +
         std::log1p(std::exp(-std::abs(x[i])));
  const double n = static_cast<double>(x.size());
  const int ia = logits.id();
  return t.record(
      Matrix(1, 1, s / n), t.requires_grad(logits),
      [ia, n, target = std::vector<double>(target.begin(), target.end())](
          Tape& tp, int self) {
        const double g = tp.out_grad(self)[0];
        const Matrix& x = tp.value(ia);
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < x.size(); ++i)
          ga[i] += g * (sigmoid_scalar(x[i]) - target[i]) / n;
      });
}

Var dice_with_logits(Var logits, std::span<const double> target,
                     double smooth) {
  Tape& t = tape_of(logits);
  const Matrix& x = logits.value();
  require(x.size() == target.size(), "dice_with_logits: length mismatch");
  std::vector<double> p(x.size());
  double inter = 0.0, ps = 0.0, gs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = sigmoid_scalar(x[i]);
    inter += p[i] * target[i];
    ps += p[i];
    gs += target[i];
  }
  const double den = ps + gs + smooth;
  const double num = 2.0 * inter + smooth;
  const int ia = logits.id();
  return t.record(
      Matrix(1, 1, 1.0 - num / den), t.requires_grad(logits),
      [ia, p = std::move(p), num, den,
       target = std::vector<double>(target.begin(), target.end())](
          Tape& tp, int self) {
        const double g = tp.out_grad(self)[0];
        Matrix& ga = tp.grad_ref(ia);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double dp = -(2.0 * target[i] * den - num) / (den * den);
          ga[i] += g * dp * p[i] * (1.0 - p[i]);
        }
      });
}

}  // namespace refseg::ad
