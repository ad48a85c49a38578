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
#include <string>
#include <vector>

#include "refseg/numeric/params.hpp"
#include "refseg/numeric/rng.hpp"
#include "refseg/text.hpp"

namespace refseg::lpc {

enum class SampleMode { kGaussian, kMuOnly };

/// Where the decoder's primitive queries come from.
enum class QueryMode { kPrimitives, kFps, kTopK };

std::string query_mode_name(QueryMode m);
QueryMode parse_query_mode(const std::string& s);

struct LpcConfig {
  std::size_t primitives = 16;  // N_o
  std::size_t dim = 32;
  QueryMode query = QueryMode::kPrimitives;
  SampleMode sample = SampleMode::kGaussian;
  bool gumbel = true;        // false: plain softmax binding
  bool hard = true;          // straight-through one-hot binding
  double temperature = 1.0;  // Gumbel-Softmax temperature
  double initial_sigma = 0.1;
};

/// Per-primitive, per-dimension Gaussian parameters plus the projections
/// used for binding. sigma = softplus(sigma_raw) stays nonnegative.
struct PrimitiveParams {
  ParamId mu = 0;
  ParamId sigma_raw = 0;
  LinearLayer query;   // omega_Q
  LinearLayer key;     // omega_K
  LinearLayer value;   // omega_V
  LinearLayer output;  // omega_1

  static PrimitiveParams create(ParamStore& store, const std::string& name,
                                const LpcConfig& cfg, Rng& rng);
  ad::Var sigma(Graph& g) const;
};

/// O = mu + sigma * xi with xi ~ N(0, 1) from the noise source; mu_only
/// returns mu and draws nothing.
ad::Var sample_primitives(ad::Var mu, ad::Var sigma, NoiseSource& noise,
                          SampleMode mode);

struct ConstructTrace {
  Matrix logits;      // A, N_o x N_t
  Matrix assignment;  // A-hat as used in the forward pass
};

/// O' = omega_1(A-hat V) with A = omega_Q(O) omega_K(F_t)^T / sqrt(D) and
/// A-hat the row-wise (Gumbel-)softmax of A over words.
ad::Var construct(Graph& g, ad::Var primitives,
                  const text::TokenSequence& text,
                  const PrimitiveParams& params, const LpcConfig& cfg,
                  NoiseSource& noise, ConstructTrace* trace = nullptr);

/// Rows of the m highest scores (ties to the lowest index), best first.
std::vector<std::size_t> top_k_rows(std::span<const double> scores,
                                    std::size_t m);

/// Features at m farthest-point-sampled points.
ad::Var fps_query_baseline(ad::Var features, const Matrix& positions,
                           std::size_t m);
/// Features at the m points most aligned (dot product) with the sentence.
ad::Var topk_query_baseline(ad::Var features, ad::Var sentence, std::size_t m);

}  // namespace refseg::lpc
