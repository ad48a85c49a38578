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
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/text.hpp"

namespace refseg::data {

// Scene axes: x points right, y points up, z points toward the viewer.
// Relations compare cluster centers with strict inequalities:
//   left_of: x < anchor.x    right_of: x > anchor.x
//   above:   y > anchor.y    below:    y < anchor.y
//   nearest_to: strictly closer to the anchor than every other cluster
//               matching the same description.

enum class Shape : std::uint8_t { kCube, kSphere, kSlab };
enum class SizeClass : std::uint8_t { kSmall, kLarge };
enum class Relation : std::uint8_t { kLeftOf, kRightOf, kAbove, kBelow, kNearestTo };

inline constexpr std::size_t kNumColors = 6;
inline constexpr std::size_t kFeatureDim = 6;  // rgb + surface normal

std::string_view shape_name(Shape s);
std::string_view size_name(SizeClass s);
std::string_view color_name(std::size_t color);
std::array<double, 3> color_rgb(std::size_t color);
std::string_view relation_name(Relation r);

/// Closed vocabulary of the expression grammar.
const text::Vocabulary& standard_vocabulary();

struct Cluster {
  Shape shape = Shape::kCube;
  std::uint8_t color = 0;
  SizeClass size = SizeClass::kSmall;
  std::array<double, 3> center{};
  std::size_t points = 0;

  /// Scale parameter: 0.35 for small, 0.7 for large.
  double extent() const;
  /// Radius of a sphere enclosing the cluster's shape.
  double bounding_radius() const;
  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct SceneSpec {
  std::vector<Cluster> clusters;
  std::size_t floor_points = 0;
  std::uint64_t seed = 0;  // drives point sampling and the expression

  /// Throws unless there are >= 2 clusters and no two bounding spheres
  /// overlap.
  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct GrammarConfig {
  std::size_t min_clusters = 3;
  std::size_t max_clusters = 6;
  std::size_t min_points = 256;
  std::size_t max_points = 1024;
  std::size_t cluster_min_points = 32;
  std::size_t cluster_max_points = 256;
  std::size_t floor_min_points = 32;
  double relation_prob = 0.15;    // add a (true) relation clause
  double extra_attribute_prob = 0.25;  // name more attributes than needed
  double elevated_prob = 0.3;     // cluster floats above the floor
  std::size_t max_retries = 200;

  void validate() const;
};

struct Sample {
  geometry::PointCloud cloud;
  std::vector<std::size_t> tokens;
  geometry::Mask gt_mask;
  std::size_t target = 0;
  bool is_unique = false;
  SceneSpec scene;

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.cloud.positions == b.cloud.positions &&
           a.cloud.features == b.cloud.features && a.tokens == b.tokens &&
           a.gt_mask == b.gt_mask && a.target == b.target &&
           a.is_unique == b.is_unique && a.scene == b.scene;
  }
};

/// Cluster indices satisfying every attribute and relation predicate of
/// the expression `[the] [size] [color] shape [relation [the] [size] [color] shape]`.
std::vector<std::size_t> evaluate_expression(const std::vector<std::size_t>& ids,
                                             const std::vector<Cluster>& clusters,
                                             const text::Vocabulary& vocab =
                                                 standard_vocabulary());

/// Random scene layout for a seed (cluster attributes, sizes, positions).
SceneSpec random_scene(std::uint64_t seed, const GrammarConfig& grammar);
/// Sample points for the spec and pick a target with an unambiguous
/// expression; throws if none exists within the retry budget.
Sample generate(const SceneSpec& spec, const GrammarConfig& grammar);
/// Draws scenes from the seed until one admits an unambiguous expression.
Sample generate(std::uint64_t seed, const GrammarConfig& grammar);

/// Seed of sample `index` in a dataset built from `base_seed`.
std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t index);
std::vector<Sample> generate_dataset(std::uint64_t base_seed, std::size_t count,
                                     const GrammarConfig& grammar);

/// Binary dataset file plus `<path>.index.json` sidecar.
void save_dataset(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& path);
std::string index_path(const std::string& dataset_path);

/// ASCII PLY with per-vertex 8-bit RGB.
void export_ply(const std::string& path, const Matrix& positions,
                const std::vector<std::array<double, 3>>& colors);
/// Blue (low) to red (high) ramp over [0, 1].
std::array<double, 3> heat_color(double t);

}  // namespace refseg::data
