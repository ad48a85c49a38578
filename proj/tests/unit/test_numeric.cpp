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

#include <cmath>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "refseg/error.hpp"
#include "refseg/numeric/autodiff.hpp"
#include "refseg/numeric/grad_check.hpp"
#include "refseg/numeric/kernels.hpp"
#include "refseg/numeric/params.hpp"

using namespace refseg;

namespace {

// Naive triple loop, kept independent of the Eigen-backed kernels.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

using OpBuilder = std::function<ad::Var(Graph&, const std::vector<ad::Var>&)>;

// Finite-difference check of one op through loss = sum(op(inputs) * R).
GradCheckReport check_op(const std::vector<Matrix>& inputs, const OpBuilder& op,
                         std::uint64_t seed = 3) {
  ParamStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("x" + std::to_string(i), inputs[i]);
  Matrix proj;
  const LossFunction f = [&](const ParamStore& s, std::vector<Matrix>* grads) {
    Graph g(s);
    std::vector<ad::Var> xs;
    for (ParamId id = 0; id < s.size(); ++id) xs.push_back(g.param(id));
    ad::Var y = op(g, xs);
    if (proj.empty()) {
      Rng rng(seed);
      proj = rng.normal_matrix(y.rows(), y.cols());
    }
    ad::Var loss = ad::sum(ad::mul(y, g.constant(proj)));
    if (grads) {
      g.backward(loss);
      *grads = g.gradients();
    }
    return loss.item();
  };
  GradCheckOptions opt;
  opt.resolution_factor = 4.0;
  return grad_check(f, store, 1e-6, opt);
}

Matrix randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(r, c);
}

}  // namespace

TEST_SUITE("numeric") {

TEST_CASE("matmul variants agree with a naive product") {
  const Matrix a = randn(5, 7, 1), b = randn(7, 4, 2);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("gather_rows selects rows in order, repeats allowed") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> idx{2, 0, 2};
  const Matrix g = gather_rows(a, idx);
  CHECK(g == Matrix::from_rows({{5, 6}, {1, 2}, {5, 6}}));
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(gather_rows(a, bad), Error);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  Matrix x = randn(20, 9, 4);
  x *= 50.0;
  x(0, 0) = 1e6;
  const Matrix p = softmax(x, Axis::kCols);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0;
    for (double v : p.row(i)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  CHECK(p(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("softmax along rows normalizes columns") {
  const Matrix p = softmax(randn(6, 3, 5), Axis::kRows);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += p(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax rejects empty and non-finite input") {
  CHECK_THROWS_AS(softmax(Matrix(0, 3)), Error);
  Matrix x(1, 2);
  x(0, 1) = std::nan("");
  CHECK_THROWS_AS(softmax(x), Error);
}

TEST_CASE("softmax of a uniform row is uniform") {
  const Matrix p = softmax(Matrix(1, 4, 2.5));
  for (double v : p.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("hard gumbel-softmax rows are exactly one-hot") {
  Rng rng(9);
  const Matrix logits = randn(50, 6, 10);
  for (double temp : {0.1, 1.0, 5.0}) {
    const auto r = gumbel_softmax(logits, temp, true, rng);
    for (std::size_t i = 0; i < r.output.rows(); ++i) {
      int ones = 0;
      for (double v : r.output.row(i)) {
        CHECK((v == 0.0 || v == 1.0));
        ones += v == 1.0;
      }
      CHECK(ones == 1);
    }
  }
}

TEST_CASE("gumbel-softmax ties go to the lowest column") {
  const Matrix logits(2, 3, 0.0), noise(2, 3, 0.0);
  const auto r = gumbel_softmax(logits, noise, 1.0, true);
  CHECK(r.output == Matrix::from_rows({{1, 0, 0}, {1, 0, 0}}));
  const auto soft = gumbel_softmax(logits, noise, 1.0, false);
  CHECK(soft.output(0, 2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("gumbel noise follows the closed-form transform") {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) {
    const double u = b.uniform();
    CHECK(a.gumbel() == doctest::Approx(-std::log(-std::log(u))).epsilon(1e-15));
  }
}

TEST_CASE("rng streams replay from the seed") {
  Rng a(42), b(42);
  const Matrix x = a.normal_matrix(3, 3), y = b.normal_matrix(3, 3);
  CHECK(x == y);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    const auto k = a.uniform_int(-2, 2);
    CHECK(k >= -2);
    CHECK(k <= 2);
  }
}

TEST_CASE("noise source record/replay reproduces draws") {
  Rng rng(1);
  NoiseSource n(&rng, NoiseSource::Mode::kRecord);
  const Matrix g = n.gumbel(2, 3), z = n.normal(4, 1);
  n.start_replay();
  CHECK(n.gumbel(2, 3) == g);
  CHECK(n.normal(4, 1) == z);
  CHECK_THROWS_AS(n.normal(1, 1), Error);
  n.start_replay();
  CHECK_THROWS_AS(n.gumbel(3, 3), Error);
  NoiseSource zero = NoiseSource::zero();
  CHECK(zero.gumbel(2, 2) == Matrix(2, 2));
}

TEST_CASE("attention matches a hand-computed softmax and flags masked rows") {
  const Matrix q = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix k = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const Matrix v = Matrix::from_rows({{1, 0}, {0, 1}, {2, 2}});
  const auto r = attention_block(q, k, v);
  const double s = 1.0 / std::sqrt(2.0);
  const double w0 = std::exp(s), w1 = 1.0, w2 = std::exp(s);
  const double z = w0 + w1 + w2;
  CHECK(r.output(0, 0) == doctest::Approx((w0 * 1 + w2 * 2) / z));
  CHECK(r.output(0, 1) == doctest::Approx((w1 * 1 + w2 * 2) / z));

  Matrix mask(2, 3, 1.0);
  mask(1, 0) = mask(1, 1) = mask(1, 2) = 0.0;
  mask(0, 2) = 0.0;
  const auto m = attention_block(q, k, v, mask);
  CHECK_FALSE(m.fully_masked[0]);
  CHECK(m.fully_masked[1]);
  CHECK(m.output(1, 0) == 0.0);
  CHECK(m.output(1, 1) == 0.0);
  const double e = std::exp(s);
  CHECK(m.output(0, 0) == doctest::Approx(e / (e + 1)));
  CHECK_THROWS_AS(attention_block(q, k, v, Matrix(2, 2, 1.0)), Error);
}

TEST_CASE("reverse-mode gradients match finite differences per op") {
  const Matrix a = randn(4, 3, 11), b = randn(3, 5, 12), c = randn(4, 3, 13);
  const Matrix row = randn(1, 3, 14);
  const std::vector<std::size_t> idx{3, 1, 1, 0, 2, 2};
  const std::vector<std::size_t> groups{0, 1, 2, 3, 2, 1};
  const std::vector<double> w{0.2, 0.5, 0.3, 0.7, 0.1, 0.2};
  const std::vector<double> target{1, 0, 0, 1, 1};

  struct Case {
    const char* name;
    std::vector<Matrix> in;
    OpBuilder op;
  };
  const std::vector<Case> cases = {
      {"matmul", {a, b}, [](Graph&, auto& x) { return ad::matmul(x[0], x[1]); }},
      {"matmul_nt", {a, c}, [](Graph&, auto& x) { return ad::matmul_nt(x[0], x[1]); }},
      {"add_sub_mul", {a, c},
       [](Graph&, auto& x) { return ad::mul(ad::sub(x[0], x[1]), ad::add(x[0], x[1])); }},
      {"scale", {a}, [](Graph&, auto& x) { return ad::add_scalar(ad::scale(x[0], -1.5), 2); }},
      {"add_row", {a, row}, [](Graph&, auto& x) { return ad::add_row(x[0], x[1]); }},
      {"linear", {a, randn(2, 3, 15), randn(1, 2, 16)},
       [](Graph&, auto& x) { return ad::linear(x[0], x[1], x[2]); }},
      {"transpose", {a}, [](Graph&, auto& x) { return ad::transpose(x[0]); }},
      {"relu", {a}, [](Graph&, auto& x) { return ad::relu(x[0]); }},
      {"sigmoid", {a}, [](Graph&, auto& x) { return ad::sigmoid(x[0]); }},
      {"softplus", {a}, [](Graph&, auto& x) { return ad::softplus(x[0]); }},
      {"log", {randn(3, 3, 17)},
       [](Graph&, auto& x) { return ad::log(ad::add_scalar(ad::softplus(x[0]), 0.1)); }},
      {"softmax_rows", {a}, [](Graph&, auto& x) { return ad::softmax_rows(x[0]); }},
      {"log_softmax_rows", {a}, [](Graph&, auto& x) { return ad::log_softmax_rows(x[0]); }},
      {"gumbel_soft", {a},
       [](Graph&, auto& x) {
         return ad::gumbel_softmax_rows(x[0], randn(4, 3, 18), 0.7, false);
       }},
      {"layer_norm", {a, randn(1, 3, 19), randn(1, 3, 20)},
       [](Graph&, auto& x) { return ad::layer_norm(x[0], x[1], x[2]); }},
      {"normalize_rows", {a}, [](Graph&, auto& x) { return ad::normalize_rows(x[0]); }},
      {"gather_rows", {a}, [&](Graph&, auto& x) { return ad::gather_rows(x[0], idx); }},
      {"group_max", {a}, [&](Graph&, auto& x) { return ad::group_max(x[0], groups, 2); }},
      {"group_sum", {a}, [&](Graph&, auto& x) { return ad::group_sum(x[0], groups, 3); }},
      {"interpolate", {a}, [&](Graph&, auto& x) { return ad::interpolate(x[0], idx, w, 3); }},
      {"concat", {a, c},
       [](Graph&, auto& x) {
         const std::vector<ad::Var> parts{x[0], x[1]};
         return ad::concat_rows(ad::concat_cols(parts), ad::concat_cols(parts));
       }},
      {"slice_repeat", {a, row},
       [](Graph&, auto& x) {
         return ad::add(ad::slice_cols(x[0], 1, 2), ad::repeat_rows(ad::slice_cols(x[1], 0, 2), 4));
       }},
      {"reductions", {a},
       [](Graph&, auto& x) {
         const std::vector<ad::Var> parts{
             ad::add(ad::add(ad::mean_rows(x[0]), ad::max_rows(x[0])), ad::row(x[0], 2)),
             ad::mean(x[0])};
         return ad::concat_cols(parts);
       }},
      {"pick_sum", {a},
       [](Graph&, auto& x) { return ad::add(ad::pick(x[0], 1, 2), ad::sum(x[0])); }},
      {"bce_with_logits", {randn(1, 5, 21)},
       [&](Graph&, auto& x) { return ad::bce_with_logits(x[0], target); }},
      {"dice_with_logits", {randn(1, 5, 22)},
       [&](Graph&, auto& x) { return ad::dice_with_logits(x[0], target, 1.0); }},
  };
  for (const Case& cs : cases) {
    const std::string name = cs.name;
    CAPTURE(name);
    const GradCheckReport r = check_op(cs.in, cs.op);
    CHECK(r.checked > 0);
    CHECK(r.passed);
  }
}

TEST_CASE("straight-through gumbel passes the soft gradient") {
  ad::Tape t;
  const Matrix logits = randn(2, 4, 30), noise = randn(2, 4, 31);
  ad::Var x = t.variable(logits);
  ad::Var hard = ad::gumbel_softmax_rows(x, noise, 0.5, true);
  const Matrix soft = gumbel_softmax(logits, noise, 0.5, false).output;
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0;
    for (double v : hard.value().row(i)) s += v;
    CHECK(s == 1.0);
  }
  t.backward(ad::pick(hard, 0, 1));
  const Matrix g = t.grad(x);
  // d soft(0,1) / d logits(0,j) = soft(0,1) (delta_1j - soft(0,j)) / temperature
  for (std::size_t j = 0; j < 4; ++j) {
    const double expect = soft(0, 1) * ((j == 1 ? 1.0 : 0.0) - soft(0, j)) / 0.5;
    CHECK(g(0, j) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(g(1, j) == 0.0);
  }
}

TEST_CASE("backward requires a scalar root") {
  ad::Tape t;
  ad::Var x = t.variable(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("parameter store rejects duplicate names and keeps order") {
  ParamStore s;
  CHECK(s.add("a", Matrix(1, 2)) == 0);
  CHECK(s.add("b", Matrix(2, 2), false) == 1);
  CHECK_THROWS_AS(s.add("a", Matrix(1, 1)), Error);
  CHECK(s.at("b") == 1);
  CHECK_FALSE(s.find("c").has_value());
  CHECK(s.trainable_scalars() == 2);
}

TEST_CASE("graph gradients are zero for untouched parameters") {
  ParamStore s;
  const ParamId a = s.add("a", Matrix(1, 2, 3.0));
  s.add("unused", Matrix(2, 2, 1.0));
  Graph g(s);
  ad::Var loss = ad::sum(ad::mul(g.param(a), g.param(a)));
  g.backward(loss);
  const auto grads = g.gradients();
  CHECK(grads[0] == Matrix(1, 2, 6.0));
  CHECK(grads[1] == Matrix(2, 2, 0.0));
}

TEST_CASE("grad_check flags a wrong gradient") {
  ParamStore s;
  s.add("x", Matrix(1, 3, 0.5));
  const LossFunction wrong = [](const ParamStore& p, std::vector<Matrix>* grads) {
    double l = 0;
    for (double v : p[0].value.values()) l += v * v * v;
    if (grads) *grads = {Matrix(1, 3, 1.0)};  // true gradient is 3 x^2 = 0.75
    return l;
  };
  CHECK_FALSE(grad_check(wrong, s, 1e-4).passed);
  const LossFunction right = [](const ParamStore& p, std::vector<Matrix>* grads) {
    double l = 0;
    for (double v : p[0].value.values()) l += v * v * v;
    if (grads) {
      Matrix g(1, 3);
      for (std::size_t i = 0; i < 3; ++i) g[i] = 3 * p[0].value[i] * p[0].value[i];
      *grads = {g};
    }
    return l;
  };
  const auto r = grad_check(right, s, 1e-6);
  CHECK(r.passed);
  CHECK(r.checked == 3);
}

TEST_CASE("linear layer initializes within the fan-in bound") {
  ParamStore s;
  Rng rng(2);
  const auto l = LinearLayer::create(s, "fc", 16, 4, rng);
  const double bound = 1.0 / 4.0;
  for (double v : s[l.weight].value.values()) CHECK(std::abs(v) <= bound);
  CHECK(s[l.weight].value.rows() == 4);
  CHECK(s[l.weight].value.cols() == 16);
}

}  // TEST_SUITE
