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
#include <cstdint>
#include <cstddef>
#include <span>
#include <vector>

#include "refseg/numeric/matrix.hpp"
#include "refseg/numeric/rng.hpp"

namespace refseg::geometry {

/// N points: positions N x 3 (scene units) plus N x F auxiliary features.
struct PointCloud {
  Matrix positions;
  Matrix features;

  std::size_t size() const noexcept { return positions.rows(); }
  /// Throws unless N >= 1, positions are N x 3, rows agree, values finite.
  void validate() const;
};

/// Row-major (rows x k) table of point indices.
struct NeighborTable {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::size_t> idx;

  std::span<const std::size_t> row(std::size_t r) const {
    return {idx.data() + r * k, k};
  }
};

/// Greedy farthest point sampling. The first index is `start`; every next
/// index maximizes the squared distance to the selected set, ties to the
/// lowest index. Works for points of any dimension (one per row).
std::vector<std::size_t> fps(const Matrix& points, std::size_t m,
                             std::size_t start = 0);
/// Same, with the start index drawn from the generator.
std::vector<std::size_t> fps(const Matrix& points, std::size_t m, Rng& rng);

/// k nearest reference rows per query row, ascending by distance, ties to
/// the lowest index.
NeighborTable knn(const Matrix& queries, const Matrix& reference,
                  std::size_t k);

/// Inverse squared-distance weights over the min(3, N_g) nearest centroids,
/// w_j ~ 1 / (d_j^2 + eps), normalized per target.
struct InterpolationPlan {
  std::size_t k = 0;
  std::vector<std::size_t> idx;  // targets x k
  std::vector<double> weights;   // targets x k
};

inline constexpr double kInterpolationEps = 1e-8;

InterpolationPlan interpolation_plan(const Matrix& centroid_positions,
                                     const Matrix& target_positions,
                                     std::size_t neighbors = 3,
                                     double eps = kInterpolationEps);
Matrix apply_interpolation(const InterpolationPlan& plan,
                           const Matrix& centroid_features);
/// Feature propagation from centroids to targets (plan + apply).
Matrix propagate(const Matrix& centroid_positions,
                 const Matrix& centroid_features,
                 const Matrix& target_positions);

/// Per-point binary mask (0 or 1).
using Mask = std::vector<std::uint8_t>;

struct Aabb {
  std::array<double, 3> min{};
  std::array<double, 3> max{};
};

/// Component-wise bounds of the selected points; throws on an empty mask.
Aabb mask_to_aabb(const PointCloud& cloud, std::span<const std::uint8_t> mask);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace refseg::geometry
