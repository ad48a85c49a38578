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
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "refseg/decoder.hpp"
#include "refseg/numeric/matrix.hpp"

namespace refseg::losses {

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double con = 0.3;
  double tau = 0.05;
  double no_object = 0.1;  // weight of unmatched queries in the class loss
  double dice_smooth = 1.0;

  void validate() const;
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // sorted by row
  double total = 0.0;
};

/// Minimum-cost assignment of min(M, K) rows to distinct columns. Among
/// optimal assignments the lexicographically smallest pair list is chosen.
Assignment hungarian(const Matrix& cost);

/// 1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s).
double dice_loss(std::span<const double> probs, std::span<const double> gt,
                 double smooth = 1.0);
/// Mean binary cross-entropy of probabilities (clamped to [1e-12, 1-1e-12]).
double bce_loss(std::span<const double> probs, std::span<const double> gt);
/// Mean binary cross-entropy computed from logits without overflow.
double bce_logits_loss(std::span<const double> logits,
                       std::span<const double> gt);
/// Weighted two-class cross-entropy over queries. Row i of score_logits is
/// (target, no-object); matched queries use the target class with weight
/// 1, the rest the no-object class with weight no_object. Normalized by
/// the total weight.
double cls_loss(const Matrix& score_logits, std::span<const std::uint8_t> matched,
                double no_object = 0.1);

struct MatchResult {
  std::size_t assigned = 0;
  std::vector<double> costs;  // per query
};

/// Per-query weighted cls + bce + dice cost against one target mask.
std::vector<double> query_costs(const decoder::Prediction& pred,
                                std::span<const double> gt,
                                const LossWeights& w);

struct LossTerms {
  ad::Var match;        // lambda_cls L_cls + lambda_bce L_bce + lambda_dice L_dice
  ad::Var contrastive;  // L_con
  ad::Var total;        // match + lambda_con L_con
  double cls = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  MatchResult matching;
};

ad::Var matching_loss(const decoder::Prediction& pred,
                      std::span<const double> gt, const LossWeights& w,
                      MatchResult* result = nullptr, LossTerms* terms = nullptr);

/// -log softmax_k(cos(t, o_k) / tau)[matched] over all object embeddings.
ad::Var contrastive_loss(ad::Var sentence, ad::Var objects,
                         std::size_t matched, double tau);
double contrastive_loss(const Matrix& sentence, const Matrix& objects,
                        std::size_t matched, double tau);

LossTerms total_loss(const decoder::Prediction& pred, ad::Var sentence,
                     std::span<const double> gt, const LossWeights& w);

}  // namespace refseg::losses
