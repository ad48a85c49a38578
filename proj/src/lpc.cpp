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

#include "refseg/lpc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refseg/error.hpp"
#include "refseg/geometry.hpp"

namespace refseg::lpc {

std::string query_mode_name(QueryMode m) {
  switch (m) {
    case QueryMode::kPrimitives: return "primitives";
    case QueryMode::kFps: return "fps";
    case QueryMode::kTopK: return "topk";
  }
  return "primitives";
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "primitives") return QueryMode::kPrimitives;
  if (s == "fps") return QueryMode::kFps;
  if (s == "topk") return QueryMode::kTopK;
  fail(ErrorKind::kConfig, "unknown query mode '" + s + "'");
}

PrimitiveParams PrimitiveParams::create(ParamStore& store,
                                        const std::string& name,
                                        const LpcConfig& cfg, Rng& rng) {
  require(cfg.primitives >= 1, "lpc: need at least one primitive",
          ErrorKind::kConfig);
  PrimitiveParams p;
  const std::size_t d = cfg.dim;
  p.mu = store.add(name + ".mu", rng.normal_matrix(cfg.primitives, d, 1.0));
  const double raw = std::log(std::expm1(cfg.initial_sigma));
  p.sigma_raw = store.add(name + ".sigma_raw", Matrix(cfg.primitives, d, raw));
  p.query = LinearLayer::create(store, name + ".q", d, d, rng);
  p.key = LinearLayer::create(store, name + ".k", d, d, rng);
  p.value = LinearLayer::create(store, name + ".v", d, d, rng);
  p.output = LinearLayer::create(store, name + ".out", d, d, rng);
  return p;
}

ad::Var PrimitiveParams::sigma(Graph& g) const {
  return ad::softplus(g.param(sigma_raw));
}

ad::Var sample_primitives(ad::Var mu, ad::Var sigma, NoiseSource& noise,
                          SampleMode mode) {
  if (mode == SampleMode::kMuOnly) return mu;
  require(mu.value().same_shape(sigma.value()),
          "sample_primitives: mu/sigma shape mismatch");
  for (double s : sigma.value().values())
    require(s >= 0.0, "sample_primitives: negative sigma");
  ad::Var xi = mu.tape()->constant(noise.normal(mu.rows(), mu.cols()));
  return ad::add(mu, ad::mul(sigma, xi));
}

ad::Var construct(Graph& g, ad::Var primitives,
                  const text::TokenSequence& text,
                  const PrimitiveParams& params, const LpcConfig& cfg,
                  NoiseSource& noise, ConstructTrace* trace) {
  require(text.length() >= 1, "construct: expression has no words");
  ad::Var q = params.query(g, primitives);
  ad::Var k = params.key(g, text.words);
  ad::Var v = params.value(g, text.words);
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ad::Var logits = ad::scale(ad::matmul_nt(q, k), inv);
  ad::Var assign;
  if (cfg.gumbel) {
    assign = ad::gumbel_softmax_rows(
        logits, noise.gumbel(logits.rows(), logits.cols()), cfg.temperature,
        cfg.hard);
  } else {
    assign = ad::softmax_rows(logits);
  }
  if (trace) {
    trace->logits = logits.value();
    trace->assignment = assign.value();
  }
  return params.output(g, ad::matmul(assign, v));
}

std::vector<std::size_t> top_k_rows(std::span<const double> scores,
                                    std::size_t m) {
  require(m <= scores.size(), "top_k: m=" + std::to_string(m) + " exceeds " +
                                  std::to_string(scores.size()) + " rows");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  order.resize(m);
  return order;
}

ad::Var fps_query_baseline(ad::Var features, const Matrix& positions,
                           std::size_t m) {
  require(positions.rows() == features.rows(),
          "fps_query_baseline: positions/features mismatch");
  return ad::gather_rows(features, geometry::fps(positions, m));
}

ad::Var topk_query_baseline(ad::Var features, ad::Var sentence,
                            std::size_t m) {
  require(m <= features.rows(), "topk_query_baseline: m exceeds point count");
  const Matrix scores = refseg::matmul_nt(features.value(), sentence.value());
  return ad::gather_rows(features, top_k_rows(scores.values(), m));
}

}  // namespace refseg::lpc
