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

#include "refseg/encoder.hpp"

#include <cmath>
#include <numeric>

#include "refseg/error.hpp"

namespace refseg::encoder {

using geometry::fps;
using geometry::knn;

void EncoderConfig::validate(std::size_t n) const {
  require(dim >= 1, "encoder: dim must be positive", ErrorKind::kConfig);
  for (std::size_t i = 0; i + 1 < kNumScales; ++i)
    require(scale_points(n, i + 1) >= 1 &&
                scale_points(n, i + 1) < scale_points(n, i),
            "encoder: " + std::to_string(n) +
                " points do not give strictly decreasing scale sizes",
            ErrorKind::kConfig);
  const std::size_t coarsest = scale_points(n, kNumScales - 1);
  require(sa_neighbors >= 1 && sa_neighbors <= scale_points(n, kNumScales - 2),
          "encoder: sa_neighbors exceeds a pooled scale",
          ErrorKind::kConfig);
  if (fusion_mode == FusionMode::kGroup) {
    require(groups >= 1 && groups <= coarsest,
            "encoder: groups=" + std::to_string(groups) +
                " exceeds the coarsest scale (" + std::to_string(coarsest) +
                " points)",
            ErrorKind::kConfig);
    require(group_neighbors >= 1 && group_neighbors <= coarsest,
            "encoder: group_neighbors exceeds the coarsest scale",
            ErrorKind::kConfig);
  }
}

std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kGroup: return "group";
    case FusionMode::kPoint: return "point";
    case FusionMode::kNone: return "none";
  }
  return "none";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "group") return FusionMode::kGroup;
  if (s == "point") return FusionMode::kPoint;
  if (s == "none") return FusionMode::kNone;
  fail(ErrorKind::kConfig, "unknown fusion mode '" + s + "'");
}

EncoderPlan plan_encoder(const geometry::PointCloud& cloud,
                         const EncoderConfig& cfg) {
  cloud.validate();
  require(cloud.features.cols() == cfg.input_features,
          "encoder: cloud has " + std::to_string(cloud.features.cols()) +
              " features, config expects " + std::to_string(cfg.input_features));
  const std::size_t n = cloud.size();
  cfg.validate(n);

  EncoderPlan plan;
  plan.input = Matrix(n, 3 + cfg.input_features);
  std::array<double, 3> center{};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) center[a] += cloud.positions(i, a);
  for (double& c : center) c /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a)
      plan.input(i, a) = cloud.positions(i, a) - center[a];
    for (std::size_t f = 0; f < cfg.input_features; ++f)
      plan.input(i, 3 + f) = cloud.features(i, f);
  }

  plan.scales[0].positions = cloud.positions;
  for (std::size_t s = 1; s < kNumScales; ++s) {
    ScalePlan& sp = plan.scales[s];
    const Matrix& finer = plan.scales[s - 1].positions;
    sp.subset = fps(finer, EncoderConfig::scale_points(n, s));
    sp.positions = refseg::gather_rows(finer, sp.subset);
    sp.pool_neighbors = knn(sp.positions, finer, cfg.sa_neighbors);
    const std::size_t k = cfg.sa_neighbors;
    sp.relative_positions = Matrix(sp.positions.rows() * k, 3);
    for (std::size_t c = 0; c < sp.positions.rows(); ++c)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t a = 0; a < 3; ++a)
          sp.relative_positions(c * k + j, a) =
              finer(sp.pool_neighbors.idx[c * k + j], a) - sp.positions(c, a);
  }
  for (std::size_t s = 0; s + 1 < kNumScales; ++s)
    plan.scales[s].from_coarser = geometry::interpolation_plan(
        plan.scales[s + 1].positions, plan.scales[s].positions);

  if (cfg.fusion_mode == FusionMode::kGroup &&
      cfg.grouping_space == GroupingSpace::kCoordinate) {
    for (std::size_t s = 1; s < kNumScales; ++s) {
      ScalePlan& sp = plan.scales[s];
      sp.group_centroids = fps(sp.positions, cfg.groups);
      const Matrix centroids = refseg::gather_rows(sp.positions, sp.group_centroids);
      sp.groups = knn(centroids, sp.positions, cfg.group_neighbors);
      sp.group_to_points = geometry::interpolation_plan(centroids, sp.positions);
    }
  }
  return plan;
}

EncoderParams EncoderParams::create(ParamStore& store, const std::string& name,
                                    const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p;
  const std::size_t d = cfg.dim;
  p.stem = LinearLayer::create(store, name + ".stem", 3 + cfg.input_features, d, rng);
  for (std::size_t s = 1; s < kNumScales; ++s) {
    const std::string tag = name + ".down" + std::to_string(s);
    p.pool_in[s] = LinearLayer::create(store, tag + ".pre", d + 3, d, rng);
    p.pool_out[s] = LinearLayer::create(store, tag + ".post", d, d, rng);
  }
  for (std::size_t s = 0; s + 1 < kNumScales; ++s)
    p.up[s] = LinearLayer::create(store, name + ".up" + std::to_string(s), d, d, rng);
  p.head = LinearLayer::create(store, name + ".head", d, d, rng);
  p.background = store.add(name + ".background", rng.normal_matrix(1, d, 1.0));
  return p;
}

namespace {

struct Grouping {
  std::vector<std::size_t> centroids;
  geometry::NeighborTable groups;
  geometry::InterpolationPlan to_points;
};

Grouping feature_space_grouping(const Matrix& features,
                                const EncoderConfig& cfg) {
  Grouping gr;
  gr.centroids = fps(features, cfg.groups);
  const Matrix c = refseg::gather_rows(features, gr.centroids);
  gr.groups = knn(c, features, cfg.group_neighbors);
  gr.to_points = geometry::interpolation_plan(c, features);
  return gr;
}

// softmax([S_words, S_bg]) with the background column dropped, times F_t.
ad::Var attend_words(ad::Var queries, const text::TokenSequence& text,
                     ad::Var background, const EncoderConfig& cfg,
                     FusionTrace* trace, const FuseOptions& opt) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  ad::Var logits = ad::scale(ad::matmul_nt(queries, text.words), inv);
  const std::size_t nt = text.length();
  ad::Var weights;
  if (cfg.use_background_token) {
    ad::Var bg_logit;
    if (opt.background_logit) {
      require(opt.background_logit->size() == queries.rows(),
              "gegwa: background override length mismatch");
      bg_logit = queries.tape()->constant(
          Matrix(queries.rows(), 1, *opt.background_logit));
    } else {
      bg_logit = ad::scale(ad::matmul_nt(queries, background), inv);
    }
    const ad::Var parts[] = {logits, bg_logit};
    ad::Var full = ad::softmax_rows(ad::concat_cols(parts));
    weights = ad::slice_cols(full, 0, nt);
    if (trace) trace->attention = full.value();
  } else {
    weights = ad::softmax_rows(logits);
    if (trace) trace->attention = weights.value();
  }
  if (trace) trace->truncated = weights.value();
  return ad::matmul(weights, text.words);
}

}  // namespace

ad::Var gegwa_fuse(Graph& g, const ScaleFeatures& scale,
                   const text::TokenSequence& text, ad::Var background,
                   const EncoderConfig& cfg, const ScalePlan* plan,
                   FusionTrace* trace, const FuseOptions& opt) {
  require(text.length() >= 1, "gegwa: empty text");
  (void)g;
  const ad::Var feats = scale.features;
  switch (cfg.fusion_mode) {
    case FusionMode::kNone:
      return feats;
    case FusionMode::kPoint: {
      ad::Var per_point = attend_words(feats, text, background, cfg, trace, opt);
      if (trace) trace->centroid_text = per_point.value();
      return ad::mul(per_point, feats);
    }
    case FusionMode::kGroup:
      break;
  }
  Grouping local;
  const geometry::NeighborTable* groups = nullptr;
  const geometry::InterpolationPlan* to_points = nullptr;
  if (cfg.grouping_space == GroupingSpace::kCoordinate) {
    if (plan == nullptr || plan->groups.idx.empty()) {
      local.centroids = fps(scale.positions, cfg.groups);
      const Matrix c = refseg::gather_rows(scale.positions, local.centroids);
      local.groups = knn(c, scale.positions, cfg.group_neighbors);
      local.to_points = geometry::interpolation_plan(c, scale.positions);
      groups = &local.groups;
      to_points = &local.to_points;
    } else {
      groups = &plan->groups;
      to_points = &plan->group_to_points;
    }
  } else {
    local = feature_space_grouping(feats.value(), cfg);
    groups = &local.groups;
    to_points = &local.to_points;
  }
  // Summing the k neighbor logits equals one logit of the summed group
  // features, since the logits are linear in the features.
  ad::Var group_feats = ad::group_sum(feats, groups->idx, groups->k);
  if (cfg.reduction == GroupReduction::kMean)
    group_feats = ad::scale(group_feats, 1.0 / static_cast<double>(groups->k));
  ad::Var centroid_text =
      attend_words(group_feats, text, background, cfg, trace, opt);
  if (trace) trace->centroid_text = centroid_text.value();
  ad::Var point_text = ad::interpolate(centroid_text, to_points->idx,
                                       to_points->weights, to_points->k);
  return ad::mul(point_text, feats);
}

EncoderOutput encode(Graph& g, const EncoderPlan& plan,
                     const text::TokenSequence& text, const EncoderConfig& cfg,
                     const EncoderParams& params) {
  EncoderOutput out;
  // Down path.
  ad::Var x = ad::relu(params.stem(g, g.constant(plan.input)));
  out.pre_fusion[0] = {0, plan.scales[0].positions, x};
  for (std::size_t s = 1; s < kNumScales; ++s) {
    const ScalePlan& sp = plan.scales[s];
    const std::size_t k = sp.pool_neighbors.k;
    ad::Var grouped = ad::gather_rows(out.pre_fusion[s - 1].features,
                                      sp.pool_neighbors.idx);
    const ad::Var parts[] = {grouped, g.constant(sp.relative_positions)};
    ad::Var h = ad::relu(params.pool_in[s](g, ad::concat_cols(parts)));
    std::vector<std::size_t> consecutive(h.rows());
    std::iota(consecutive.begin(), consecutive.end(), std::size_t{0});
    ad::Var pooled = ad::group_max(h, consecutive, k);
    out.pre_fusion[s] = {s, sp.positions, ad::relu(params.pool_out[s](g, pooled))};
  }

  // Up path with fusion at scales 4..1.
  ad::Var bg = g.param(params.background);
  ScaleFeatures current = out.pre_fusion[kNumScales - 1];
  for (std::size_t s = kNumScales - 1; s >= 1; --s) {
    if (s < kNumScales - 1) {
      const geometry::InterpolationPlan& ip = plan.scales[s].from_coarser;
      ad::Var up = ad::interpolate(out.fused[s + 1].features, ip.idx, ip.weights, ip.k);
      ad::Var merged = ad::add(up, out.pre_fusion[s].features);
      current = {s, plan.scales[s].positions, ad::relu(params.up[s](g, merged))};
    }
    ad::Var fused = gegwa_fuse(g, current, text, bg, cfg, &plan.scales[s],
                               &out.traces[s]);
    out.fused[s] = {s, plan.scales[s].positions, fused};
  }
  const geometry::InterpolationPlan& ip0 = plan.scales[0].from_coarser;
  ad::Var up0 = ad::interpolate(out.fused[1].features, ip0.idx, ip0.weights, ip0.k);
  ad::Var merged0 = ad::relu(params.up[0](g, ad::add(up0, out.pre_fusion[0].features)));
  out.fused[0] = {0, plan.scales[0].positions, params.head(g, merged0)};
  return out;
}

}  // namespace refseg::encoder
