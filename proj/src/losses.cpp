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

#include "refseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refseg/error.hpp"

namespace refseg::losses {

void LossWeights::validate() const {
  require(cls >= 0 && bce >= 0 && dice >= 0 && con >= 0 && no_object >= 0 &&
              dice_smooth >= 0,
          "loss weights must be nonnegative", ErrorKind::kConfig);
  require(tau > 0, "contrastive temperature must be positive",
          ErrorKind::kConfig);
}

namespace {

// Shortest augmenting path with row/column potentials; rows <= cols.
// Returns the column of every row.
std::vector<std::size_t> solve_assignment(const Matrix& c) {
  const std::size_t n = c.rows(), m = c.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col_of[p[j] - 1] = j - 1;
  return col_of;
}

double assignment_total(const Matrix& c, const std::vector<std::size_t>& col_of) {
  double t = 0.0;
  for (std::size_t i = 0; i < col_of.size(); ++i) t += c(i, col_of[i]);
  return t;
}

// Optimal assignment with rows <= cols and lexicographic tie-breaking:
// fix rows in order to the smallest column that keeps the optimum.
std::vector<std::size_t> lexicographic_assignment(const Matrix& c) {
  const std::size_t n = c.rows(), m = c.cols();
  const double best = assignment_total(c, solve_assignment(c));
  double scale = 1.0;
  for (double x : c.values()) scale = std::max(scale, std::abs(x));
  const double big = 4.0 * scale * static_cast<double>(n + 1);
  const double tol = 1e-12 * static_cast<double>(n) * (1.0 + std::abs(best));
  Matrix forced = c;
  std::vector<bool> col_used(m, false);
  std::vector<std::size_t> result(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (col_used[j]) continue;
      Matrix trial = forced;
      for (std::size_t jj = 0; jj < m; ++jj)
        if (jj != j) trial(i, jj) = big;
      for (std::size_t ii = 0; ii < n; ++ii)
        if (ii != i) trial(ii, j) = big;
      const double t = assignment_total(c, solve_assignment(trial));
      if (t <= best + tol) {
        forced = std::move(trial);
        col_used[j] = true;
        result[i] = j;
        break;
      }
    }
  }
  return result;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Assignment hungarian(const Matrix& cost) {
  require(!cost.empty(), "hungarian: empty cost matrix");
  require(cost.all_finite(), "hungarian: non-finite costs", ErrorKind::kNumeric);
  Assignment a;
  if (cost.rows() <= cost.cols()) {
    const auto col_of = lexicographic_assignment(cost);
    for (std::size_t i = 0; i < col_of.size(); ++i) a.pairs.emplace_back(i, col_of[i]);
  } else {
    const auto row_of = lexicographic_assignment(transpose(cost));
    for (std::size_t j = 0; j < row_of.size(); ++j) a.pairs.emplace_back(row_of[j], j);
    std::sort(a.pairs.begin(), a.pairs.end());
  }
  for (const auto& [i, j] : a.pairs) a.total += cost(i, j);
  return a;
}

double dice_loss(std::span<const double> probs, std::span<const double> gt,
                 double smooth) {
  require(probs.size() == gt.size(), "dice_loss: length mismatch");
  double inter = 0.0, ps = 0.0, gs = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs[i] * gt[i];
    ps += probs[i];
    gs += gt[i];
  }
  return 1.0 - (2.0 * inter + smooth) / (ps + gs + smooth);
}

double bce_loss(std::span<const double> probs, std::span<const double> gt) {
  require(probs.size() == gt.size() && !probs.empty(),
          "bce_loss: length mismatch");
  constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], lo, hi);
    s -= gt[i] * std::log(p) + (1.0 - gt[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

double bce_logits_loss(std::span<const double> logits,
                       std::span<const double> gt) {
  require(logits.size() == gt.size() && !logits.empty(),
          "bce_logits_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    s += std::max(logits[i], 0.0) - logits[i] * gt[i] +
         std::log1p(std::exp(-std::abs(logits[i])));
  return s / static_cast<double>(logits.size());
}

double cls_loss(const Matrix& score_logits, std::span<const std::uint8_t> matched,
                double no_object) {
  require(score_logits.cols() == 2 && score_logits.rows() == matched.size(),
          "cls_loss: expected one (target, no-object) row per query");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < score_logits.rows(); ++i) {
    const double a = score_logits(i, 0), b = score_logits(i, 1);
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    const double w = matched[i] ? 1.0 : no_object;
    num += w * (lse - (matched[i] ? a : b));
    den += w;
  }
  return den > 0 ? num / den : 0.0;
}

std::vector<double> query_costs(const decoder::Prediction& pred,
                                std::span<const double> gt,
                                const LossWeights& w) {
  const Matrix& logits = pred.mask_logits.value();
  const Matrix& cls = pred.class_logits.value();
  require(logits.cols() == gt.size(), "matching: mask length mismatch");
  std::vector<double> costs(logits.rows());
  std::vector<double> probs(logits.cols());
  for (std::size_t q = 0; q < logits.rows(); ++q) {
    const auto row = logits.row(q);
    for (std::size_t i = 0; i < row.size(); ++i) probs[i] = sigmoid(row[i]);
    const double a = cls(q, 0), b = cls(q, 1);
    const double mx = std::max(a, b);
    const double ce = mx + std::log(std::exp(a - mx) + std::exp(b - mx)) - a;
    costs[q] = w.cls * ce + w.bce * bce_logits_loss(row, gt) +
               w.dice * dice_loss(probs, gt, w.dice_smooth);
  }
  return costs;
}

ad::Var matching_loss(const decoder::Prediction& pred,
                      std::span<const double> gt, const LossWeights& w,
                      MatchResult* result, LossTerms* terms) {
  w.validate();
  require(std::any_of(gt.begin(), gt.end(), [](double v) { return v > 0.5; }),
          "matching_loss: ground-truth mask is empty", ErrorKind::kData);
  MatchResult match;
  match.costs = query_costs(pred, gt, w);
  const Matrix cost(match.costs.size(), 1, match.costs);
  match.assigned = hungarian(cost).pairs.front().first;

  const std::size_t nq = match.costs.size();
  ad::Var logp = ad::log_softmax_rows(pred.class_logits);
  // Weighted class cross-entropy: -(sum_i w_i log p_i(class_i)) / sum_i w_i.
  Matrix picker(nq, 2);
  double wsum = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    const bool m = q == match.assigned;
    const double wq = m ? 1.0 : w.no_object;
    picker(q, m ? 0 : 1) = -wq;
    wsum += wq;
  }
  picker *= 1.0 / wsum;
  ad::Tape& tape = *pred.class_logits.tape();
  ad::Var l_cls = ad::sum(ad::mul(logp, tape.constant(std::move(picker))));
  ad::Var mask = ad::row(pred.mask_logits, match.assigned);
  ad::Var l_bce = ad::bce_with_logits(mask, gt);
  ad::Var l_dice = ad::dice_with_logits(mask, gt, w.dice_smooth);
  ad::Var total = ad::add(ad::add(ad::scale(l_cls, w.cls), ad::scale(l_bce, w.bce)),
                          ad::scale(l_dice, w.dice));
  if (terms) {
    terms->cls = l_cls.item();
    terms->bce = l_bce.item();
    terms->dice = l_dice.item();
    terms->matching = match;
  }
  if (result) *result = std::move(match);
  return total;
}

ad::Var contrastive_loss(ad::Var sentence, ad::Var objects,
                         std::size_t matched, double tau) {
  require(tau > 0, "contrastive_loss: tau must be positive");
  require(matched < objects.rows(), "contrastive_loss: matched index out of range");
  ad::Var t = ad::normalize_rows(sentence);
  ad::Var o = ad::normalize_rows(objects);
  ad::Var sims = ad::scale(ad::matmul_nt(t, o), 1.0 / tau);  // 1 x N_c
  return ad::scale(ad::pick(ad::log_softmax_rows(sims), 0, matched), -1.0);
}

double contrastive_loss(const Matrix& sentence, const Matrix& objects,
                        std::size_t matched, double tau) {
  ad::Tape tape;
  return contrastive_loss(tape.constant(sentence), tape.constant(objects),
                          matched, tau)
      .item();
}

LossTerms total_loss(const decoder::Prediction& pred, ad::Var sentence,
                     std::span<const double> gt, const LossWeights& w) {
  LossTerms terms;
  terms.match = matching_loss(pred, gt, w, nullptr, &terms);
  terms.contrastive = contrastive_loss(sentence, pred.object_embeddings,
                                       terms.matching.assigned, w.tau);
  terms.total = w.con == 0.0
                    ? terms.match
                    : ad::add(terms.match, ad::scale(terms.contrastive, w.con));
  return terms;
}

}  // namespace refseg::losses
