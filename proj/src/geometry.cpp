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

#include "refseg/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "refseg/error.hpp"

namespace refseg::geometry {

void PointCloud::validate() const {
  require(positions.rows() >= 1, "PointCloud: needs at least one point");
  require(positions.cols() == 3, "PointCloud: positions must be N x 3");
  require(features.rows() == positions.rows(),
          "PointCloud: feature rows do not match point count");
  require(positions.all_finite() && features.all_finite(),
          "PointCloud: non-finite coordinates or features", ErrorKind::kData);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<std::size_t> fps(const Matrix& points, std::size_t m,
                             std::size_t start) {
  const std::size_t n = points.rows();
  require(m >= 1, "fps: must select at least one point");
  require(m <= n, "fps: cannot select " + std::to_string(m) + " of " +
                      std::to_string(n) + " points");
  require(start < n, "fps: start index out of range");
  std::vector<std::size_t> out;
  out.reserve(m);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::size_t cur = start;
  for (std::size_t s = 0; s < m; ++s) {
    out.push_back(cur);
    taken[cur] = true;
    if (s + 1 == m) break;
    const auto c = points.row(cur);
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(points.row(i), c));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    cur = best;
  }
  return out;
}

std::vector<std::size_t> fps(const Matrix& points, std::size_t m, Rng& rng) {
  require(points.rows() >= 1, "fps: empty point set");
  const auto start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(points.rows()) - 1));
  return fps(points, m, start);
}

NeighborTable knn(const Matrix& queries, const Matrix& reference,
                  std::size_t k) {
  const std::size_t n = reference.rows();
  require(k >= 1 && k <= n, "knn: k=" + std::to_string(k) + " with " +
                                std::to_string(n) + " reference points");
  require(queries.cols() == reference.cols(), "knn: dimension mismatch");
  NeighborTable t;
  t.rows = queries.rows();
  t.k = k;
  t.idx.resize(t.rows * k);
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto qr = queries.row(q);
    for (std::size_t i = 0; i < n; ++i)
      cand[i] = {squared_distance(qr, reference.row(i)), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k),
                      cand.end());
    for (std::size_t j = 0; j < k; ++j) t.idx[q * k + j] = cand[j].second;
  }
  return t;
}

InterpolationPlan interpolation_plan(const Matrix& centroid_positions,
                                     const Matrix& target_positions,
                                     std::size_t neighbors, double eps) {
  require(centroid_positions.rows() >= 1, "propagate: no centroids");
  const std::size_t k = std::min(neighbors, centroid_positions.rows());
  NeighborTable nn = knn(target_positions, centroid_positions, k);
  InterpolationPlan plan;
  plan.k = k;
  plan.idx = std::move(nn.idx);
  plan.weights.resize(plan.idx.size());
  for (std::size_t t = 0; t < target_positions.rows(); ++t) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d2 = squared_distance(target_positions.row(t),
                                         centroid_positions.row(plan.idx[t * k + j]));
      plan.weights[t * k + j] = 1.0 / (d2 + eps);
      total += plan.weights[t * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) plan.weights[t * k + j] /= total;
  }
  return plan;
}

Matrix apply_interpolation(const InterpolationPlan& plan,
                           const Matrix& centroid_features) {
  const std::size_t targets = plan.k == 0 ? 0 : plan.idx.size() / plan.k;
  Matrix out(targets, centroid_features.cols());
  for (std::size_t t = 0; t < targets; ++t)
    for (std::size_t j = 0; j < plan.k; ++j) {
      const std::size_t c = plan.idx[t * plan.k + j];
      require(c < centroid_features.rows(), "propagate: centroid out of range");
      const double w = plan.weights[t * plan.k + j];
      for (std::size_t d = 0; d < out.cols(); ++d)
        out(t, d) += w * centroid_features(c, d);
    }
  return out;
}

Matrix propagate(const Matrix& centroid_positions,
                 const Matrix& centroid_features,
                 const Matrix& target_positions) {
  require(centroid_positions.rows() == centroid_features.rows(),
          "propagate: centroid positions/features row mismatch");
  return apply_interpolation(
      interpolation_plan(centroid_positions, target_positions),
      centroid_features);
}

Aabb mask_to_aabb(const PointCloud& cloud, std::span<const std::uint8_t> mask) {
  require(mask.size() == cloud.size(), "mask_to_aabb: mask length mismatch");
  Aabb box;
  box.min.fill(std::numeric_limits<double>::infinity());
  box.max.fill(-std::numeric_limits<double>::infinity());
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    for (std::size_t a = 0; a < 3; ++a) {
      box.min[a] = std::min(box.min[a], cloud.positions(i, a));
      box.max[a] = std::max(box.max[a], cloud.positions(i, a));
    }
  }
  require(any, "mask_to_aabb: mask selects no points");
  return box;
}

}  // namespace refseg::geometry
