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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/numeric/params.hpp"
#include "refseg/text.hpp"

namespace refseg::encoder {

inline constexpr std::size_t kNumScales = 5;  // 0 = full resolution

enum class FusionMode { kGroup, kPoint, kNone };
enum class GroupReduction { kSum, kMean };
enum class GroupingSpace { kCoordinate, kFeature };

struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t input_features = 6;  // auxiliary features per point
  std::size_t groups = 64;         // N_g
  std::size_t group_neighbors = 16;  // k of the group-word attention
  std::size_t sa_neighbors = 8;    // k of the set-abstraction pooling
  bool use_background_token = true;
  FusionMode fusion_mode = FusionMode::kGroup;
  GroupReduction reduction = GroupReduction::kSum;
  GroupingSpace grouping_space = GroupingSpace::kCoordinate;

  /// Point count of scale i for an N-point cloud: N >> i.
  static std::size_t scale_points(std::size_t n, std::size_t scale) {
    return n >> scale;
  }
  /// Throws unless counts strictly decrease, N_g fits the coarsest scale
  /// and both neighbor counts fit every scale they are applied to.
  void validate(std::size_t n) const;
};

std::string fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

/// Parameter-independent geometry of one scale.
struct ScalePlan {
  Matrix positions;
  std::vector<std::size_t> subset;           // fps rows of the finer scale
  geometry::NeighborTable pool_neighbors;    // rows of the finer scale
  Matrix relative_positions;                 // (rows * sa_k) x 3
  geometry::InterpolationPlan from_coarser;  // scale i+1 -> scale i
  // Group-word attention (coordinate grouping only).
  std::vector<std::size_t> group_centroids;
  geometry::NeighborTable groups;
  geometry::InterpolationPlan group_to_points;
};

struct EncoderPlan {
  std::array<ScalePlan, kNumScales> scales;
  Matrix input;  // N x (3 + F): centered xyz then auxiliary features
};

/// FPS/k-NN/interpolation tables for a cloud; depends only on positions.
EncoderPlan plan_encoder(const geometry::PointCloud& cloud,
                         const EncoderConfig& cfg);

/// Per-scale features on the tape plus their positions.
struct ScaleFeatures {
  std::size_t scale = 0;
  Matrix positions;
  ad::Var features;  // N_i x D
};

/// Diagnostics of one fusion call.
struct FusionTrace {
  Matrix attention;         // softmax weights incl. the background column
  Matrix truncated;         // weights after dropping the background column
  Matrix centroid_text;     // N_g x D linguistic features per centroid
};

struct FuseOptions {
  /// Replaces the background logit of each centroid row (test hook).
  std::optional<std::vector<double>> background_logit;
};

struct EncoderParams {
  LinearLayer stem;
  std::array<LinearLayer, kNumScales> pool_in;   // [1..4] used
  std::array<LinearLayer, kNumScales> pool_out;  // [1..4] used
  std::array<LinearLayer, kNumScales> up;        // [0..3] used
  LinearLayer head;                              // F_0' projection
  ParamId background = 0;                        // T_bg, 1 x D

  static EncoderParams create(ParamStore& store, const std::string& name,
                              const EncoderConfig& cfg, Rng& rng);
};

/// Group-word (or point-word) attention fusion of one scale.
ad::Var gegwa_fuse(Graph& g, const ScaleFeatures& scale,
                   const text::TokenSequence& text, ad::Var background,
                   const EncoderConfig& cfg, const ScalePlan* plan,
                   FusionTrace* trace = nullptr, const FuseOptions& opt = {});

struct EncoderOutput {
  std::array<ScaleFeatures, kNumScales> fused;     // F_0'..F_4'
  std::array<ScaleFeatures, kNumScales> pre_fusion;  // F_0..F_4 down path
  std::array<FusionTrace, kNumScales> traces;      // [1..4]
};

EncoderOutput encode(Graph& g, const EncoderPlan& plan,
                     const text::TokenSequence& text, const EncoderConfig& cfg,
                     const EncoderParams& params);

}  // namespace refseg::encoder
