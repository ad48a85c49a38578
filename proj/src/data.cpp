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

#include "refseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "refseg/error.hpp"

namespace refseg::data {

namespace {

constexpr std::string_view kShapeNames[] = {"cube", "sphere", "slab"};
constexpr std::string_view kSizeNames[] = {"small", "large"};
constexpr std::string_view kColorNames[kNumColors] = {"red",    "green",  "blue",
                                                      "yellow", "purple", "orange"};
constexpr std::array<double, 3> kColorRgb[kNumColors] = {
    {0.85, 0.15, 0.15}, {0.15, 0.75, 0.2}, {0.15, 0.3, 0.9},
    {0.9, 0.85, 0.15},  {0.6, 0.2, 0.75},  {0.95, 0.55, 0.1}};
constexpr std::string_view kRelationNames[] = {"left_of", "right_of", "above",
                                               "below", "nearest_to"};
constexpr std::string_view kFiller = "the";
constexpr double kSeparationMargin = 0.1;
constexpr double kFloorHalfExtent = 4.5;
constexpr double kPlacementHalfExtent = 3.5;
constexpr double kPositionJitter = 0.005;
constexpr double kColorJitter = 0.04;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

// Half extents of the cluster's box (sphere: radius on every axis).
std::array<double, 3> half_extents(const Cluster& c) {
  const double s = c.extent();
  switch (c.shape) {
    case Shape::kCube:
    case Shape::kSphere:
      return {s, s, s};
    case Shape::kSlab:
      return {1.4 * s, 0.25 * s, 1.4 * s};
  }
  return {s, s, s};
}

// Attribute description of one noun phrase; shape is always present.
struct Phrase {
  Shape shape = Shape::kCube;
  std::optional<SizeClass> size;
  std::optional<std::uint8_t> color;

  bool matches(const Cluster& c) const {
    return c.shape == shape && (!size || *size == c.size) &&
           (!color || *color == c.color);
  }
};

struct Parsed {
  Phrase target;
  std::optional<Relation> relation;
  Phrase anchor;
};

Phrase parse_phrase(const std::vector<std::size_t>& ids, std::size_t& pos,
                    const text::Vocabulary& vocab) {
  Phrase p;
  bool have_shape = false;
  while (pos < ids.size() && !have_shape) {
    const std::string& tok = vocab.token(ids[pos]);
    switch (vocab.category(ids[pos])) {
      case text::Category::kFiller:
      case text::Category::kName:
        break;
      case text::Category::kSize:
        p.size = tok == kSizeNames[0] ? SizeClass::kSmall : SizeClass::kLarge;
        break;
      case text::Category::kColor: {
        const auto it = std::find(std::begin(kColorNames), std::end(kColorNames), tok);
        require(it != std::end(kColorNames), "unknown color token '" + tok + "'",
                ErrorKind::kData);
        p.color = static_cast<std::uint8_t>(it - std::begin(kColorNames));
        break;
      }
      case text::Category::kShape: {
        const auto it = std::find(std::begin(kShapeNames), std::end(kShapeNames), tok);
        require(it != std::end(kShapeNames), "unknown shape token '" + tok + "'",
                ErrorKind::kData);
        p.shape = static_cast<Shape>(it - std::begin(kShapeNames));
        have_shape = true;
        break;
      }
      case text::Category::kRelation:
        fail(ErrorKind::kData, "expression: relation before a shape noun");
    }
    ++pos;
  }
  require(have_shape, "expression: noun phrase without a shape", ErrorKind::kData);
  return p;
}

Parsed parse_expression(const std::vector<std::size_t>& ids,
                        const text::Vocabulary& vocab) {
  for (std::size_t id : ids)
    require(id < vocab.size(), "expression: token id out of range", ErrorKind::kData);
  Parsed out;
  std::size_t pos = 0;
  out.target = parse_phrase(ids, pos, vocab);
  if (pos == ids.size()) return out;
  require(vocab.category(ids[pos]) == text::Category::kRelation,
          "expression: expected a relation after the target phrase",
          ErrorKind::kData);
  const std::string& rel = vocab.token(ids[pos]);
  const auto it = std::find(std::begin(kRelationNames), std::end(kRelationNames), rel);
  require(it != std::end(kRelationNames), "unknown relation '" + rel + "'",
          ErrorKind::kData);
  out.relation = static_cast<Relation>(it - std::begin(kRelationNames));
  ++pos;
  out.anchor = parse_phrase(ids, pos, vocab);
  require(pos == ids.size(), "expression: trailing tokens", ErrorKind::kData);
  return out;
}

double center_distance2(const Cluster& a, const Cluster& b) {
  double d = 0.0;
  for (int i = 0; i < 3; ++i) d += (a.center[i] - b.center[i]) * (a.center[i] - b.center[i]);
  return d;
}

bool relation_holds(Relation r, std::size_t c, std::size_t b,
                    const std::vector<Cluster>& clusters, const Phrase& target) {
  const auto& x = clusters[c].center;
  const auto& y = clusters[b].center;
  switch (r) {
    case Relation::kLeftOf:
      return x[0] < y[0];
    case Relation::kRightOf:
      return x[0] > y[0];
    case Relation::kAbove:
      return x[1] > y[1];
    case Relation::kBelow:
      return x[1] < y[1];
    case Relation::kNearestTo: {
      const double d = center_distance2(clusters[c], clusters[b]);
      for (std::size_t o = 0; o < clusters.size(); ++o) {
        if (o == c || o == b || !target.matches(clusters[o])) continue;
        if (center_distance2(clusters[o], clusters[b]) <= d) return false;
      }
      return true;
    }
  }
  return false;
}

std::vector<std::size_t> evaluate(const Parsed& e, const std::vector<Cluster>& clusters) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (!e.target.matches(clusters[c])) continue;
    bool ok = !e.relation.has_value();
    for (std::size_t b = 0; !ok && b < clusters.size(); ++b)
      ok = b != c && e.anchor.matches(clusters[b]) &&
           relation_holds(*e.relation, c, b, clusters, e.target);
    if (ok) out.push_back(c);
  }
  return out;
}

void append_phrase(std::vector<std::size_t>& ids, const Phrase& p,
                   const text::Vocabulary& vocab) {
  ids.push_back(vocab.id(kFiller));
  if (p.size) ids.push_back(vocab.id(size_name(*p.size)));
  if (p.color) ids.push_back(vocab.id(color_name(*p.color)));
  ids.push_back(vocab.id(shape_name(p.shape)));
}

std::vector<std::size_t> to_tokens(const Parsed& e, const text::Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  append_phrase(ids, e.target, vocab);
  if (e.relation) {
    ids.push_back(vocab.id(relation_name(*e.relation)));
    append_phrase(ids, e.anchor, vocab);
  }
  return ids;
}

// Descriptions of a cluster from shortest to fullest.
std::array<Phrase, 4> descriptions(const Cluster& c) {
  std::array<Phrase, 4> d;
  for (auto& p : d) p.shape = c.shape;
  d[1].color = c.color;
  d[2].size = c.size;
  d[3].color = c.color;
  d[3].size = c.size;
  return d;
}

std::size_t pick_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
}

// Unambiguous expression for `target`, or nullopt.
std::optional<Parsed> choose_expression(const std::vector<Cluster>& clusters,
                                        std::size_t target,
                                        const GrammarConfig& grammar, Rng& rng) {
  const std::vector<std::size_t> want{target};
  std::vector<Parsed> plain;
  for (const Phrase& p : descriptions(clusters[target])) {
    Parsed e;
    e.target = p;
    if (evaluate(e, clusters) == want) plain.push_back(e);
  }
  std::vector<Parsed> relational;
  for (const Phrase& p : descriptions(clusters[target]))
    for (std::size_t b = 0; b < clusters.size(); ++b) {
      if (b == target) continue;
      for (std::size_t r = 0; r < std::size(kRelationNames); ++r)
        for (std::size_t ai = 0; ai < 2; ++ai) {
          const Phrase a = descriptions(clusters[b])[ai];  // [color] shape
          Parsed e;
          e.target = p;
          e.relation = static_cast<Relation>(r);
          e.anchor = a;
          if (evaluate(e, clusters) == want) relational.push_back(e);
        }
    }
  const double u = rng.uniform();
  if (!plain.empty() && (relational.empty() || u >= grammar.relation_prob)) {
    if (rng.uniform() >= grammar.extra_attribute_prob) return plain.front();
    return plain[pick_index(rng, plain.size())];
  }
  if (relational.empty()) return std::nullopt;
  return relational[pick_index(rng, relational.size())];
}

// Uniform point on the surface of an axis-aligned box with its normal.
void sample_box(const std::array<double, 3>& h, Rng& rng, std::array<double, 3>& p,
                std::array<double, 3>& n) {
  const double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};
  const double total = areas[0] + areas[1] + areas[2];
  double u = rng.uniform() * total;
  int axis = 0;
  while (axis < 2 && u >= areas[axis]) u -= areas[axis++];
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (int i = 0; i < 3; ++i) {
    p[i] = i == axis ? sign * h[i] : rng.uniform(-h[i], h[i]);
    n[i] = i == axis ? sign : 0.0;
  }
}

void sample_sphere(double r, Rng& rng, std::array<double, 3>& p,
                   std::array<double, 3>& n) {
  double len = 0.0;
  while (len < 1e-9) {
    for (int i = 0; i < 3; ++i) n[i] = rng.normal();
    len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  }
  for (int i = 0; i < 3; ++i) {
    n[i] /= len;
    p[i] = r * n[i];
  }
}

void put_point(Sample& s, std::size_t row, const std::array<double, 3>& p,
               const std::array<double, 3>& rgb, const std::array<double, 3>& n,
               Rng& rng) {
  for (int i = 0; i < 3; ++i) {
    s.cloud.positions(row, i) = quantize(p[i] + kPositionJitter * rng.normal());
    s.cloud.features(row, i) =
        quantize(std::clamp(rgb[i] + kColorJitter * rng.normal(), 0.0, 1.0));
    s.cloud.features(row, 3 + i) = quantize(n[i]);
  }
}

Sample sample_points(const SceneSpec& spec, Rng& rng) {
  std::size_t total = spec.floor_points;
  for (const Cluster& c : spec.clusters) total += c.points;
  Sample s;
  s.scene = spec;
  s.cloud.positions = Matrix(total, 3);
  s.cloud.features = Matrix(total, kFeatureDim);
  s.gt_mask.assign(total, 0);
  std::size_t row = 0;
  std::array<double, 3> p{}, n{};
  for (const Cluster& c : spec.clusters) {
    const auto h = half_extents(c);
    for (std::size_t k = 0; k < c.points; ++k, ++row) {
      if (c.shape == Shape::kSphere)
        sample_sphere(h[0], rng, p, n);
      else
        sample_box(h, rng, p, n);
      for (int i = 0; i < 3; ++i) p[i] += c.center[i];
      put_point(s, row, p, color_rgb(c.color), n, rng);
    }
  }
  const std::array<double, 3> grey{0.5, 0.5, 0.5}, up{0.0, 1.0, 0.0};
  for (std::size_t k = 0; k < spec.floor_points; ++k, ++row) {
    p = {rng.uniform(-kFloorHalfExtent, kFloorHalfExtent), 0.0,
         rng.uniform(-kFloorHalfExtent, kFloorHalfExtent)};
    put_point(s, row, p, grey, up, rng);
  }
  return s;
}

// ---- little-endian binary helpers ----

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_le(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_le(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f32() {
    const auto bits = get<std::uint32_t>();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  double f64() {
    const auto bits = get<std::uint64_t>();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), "dataset: truncated file", ErrorKind::kData);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'R', 'S', 'D', '1'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

std::string_view shape_name(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string_view size_name(SizeClass s) { return kSizeNames[static_cast<int>(s)]; }
std::string_view color_name(std::size_t color) {
  require(color < kNumColors, "color id out of range");
  return kColorNames[color];
}
std::array<double, 3> color_rgb(std::size_t color) {
  require(color < kNumColors, "color id out of range");
  return kColorRgb[color];
}
std::string_view relation_name(Relation r) {
  return kRelationNames[static_cast<int>(r)];
}

const text::Vocabulary& standard_vocabulary() {
  static const text::Vocabulary vocab = [] {
    text::Vocabulary v;
    v.add(std::string(kFiller), text::Category::kFiller);
    for (auto c : kColorNames) v.add(std::string(c), text::Category::kColor);
    for (auto s : kShapeNames) v.add(std::string(s), text::Category::kShape);
    for (auto s : kSizeNames) v.add(std::string(s), text::Category::kSize);
    for (auto r : kRelationNames) v.add(std::string(r), text::Category::kRelation);
    return v;
  }();
  return vocab;
}

double Cluster::extent() const { return size == SizeClass::kSmall ? 0.35 : 0.7; }

double Cluster::bounding_radius() const {
  if (shape == Shape::kSphere) return extent();
  const auto h = half_extents(*this);
  return std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
}

void SceneSpec::validate() const {
  require(clusters.size() >= 2, "scene: at least 2 clusters required",
          ErrorKind::kData);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    require(clusters[i].color < kNumColors, "scene: color id out of range",
            ErrorKind::kData);
    require(clusters[i].points >= 1, "scene: empty cluster", ErrorKind::kData);
    for (std::size_t j = i + 1; j < clusters.size(); ++j) {
      const double r = clusters[i].bounding_radius() + clusters[j].bounding_radius();
      require(center_distance2(clusters[i], clusters[j]) >= r * r,
              "scene: clusters " + std::to_string(i) + " and " + std::to_string(j) +
                  " overlap",
              ErrorKind::kData);
    }
  }
}

void GrammarConfig::validate() const {
  require(min_clusters >= 2 && min_clusters <= max_clusters,
          "grammar: need 2 <= min_clusters <= max_clusters", ErrorKind::kConfig);
  require(cluster_min_points >= 1 && cluster_min_points <= cluster_max_points,
          "grammar: bad cluster point range", ErrorKind::kConfig);
  require(min_points <= max_points, "grammar: min_points > max_points",
          ErrorKind::kConfig);
  require(max_clusters * cluster_min_points + floor_min_points <= max_points,
          "grammar: max_points too small for the cluster budget", ErrorKind::kConfig);
  require(relation_prob >= 0 && relation_prob <= 1 && extra_attribute_prob >= 0 &&
              extra_attribute_prob <= 1 && elevated_prob >= 0 && elevated_prob <= 1,
          "grammar: probabilities must lie in [0, 1]", ErrorKind::kConfig);
  require(max_retries >= 1, "grammar: max_retries must be >= 1", ErrorKind::kConfig);
}

std::vector<std::size_t> evaluate_expression(const std::vector<std::size_t>& ids,
                                             const std::vector<Cluster>& clusters,
                                             const text::Vocabulary& vocab) {
  return evaluate(parse_expression(ids, vocab), clusters);
}

SceneSpec random_scene(std::uint64_t seed, const GrammarConfig& grammar) {
  grammar.validate();
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = splitmix64(seed);
  const auto count = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(grammar.min_clusters),
                      static_cast<std::int64_t>(grammar.max_clusters)));
  const std::size_t per_cluster_cap = std::min(
      grammar.cluster_max_points, (grammar.max_points - grammar.floor_min_points) / count);
  for (std::size_t attempt = 0; spec.clusters.size() < count; ++attempt) {
    require(attempt < grammar.max_retries * count,
            "scene: could not place clusters without overlap", ErrorKind::kData);
    Cluster c;
    c.shape = static_cast<Shape>(rng.uniform_int(0, 2));
    c.color = static_cast<std::uint8_t>(rng.uniform_int(0, kNumColors - 1));
    c.size = static_cast<SizeClass>(rng.uniform_int(0, 1));
    c.points = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(grammar.cluster_min_points),
                        static_cast<std::int64_t>(per_cluster_cap)));
    const double lift = rng.uniform() < grammar.elevated_prob ? rng.uniform(0.8, 2.0) : 0.0;
    c.center = {quantize(rng.uniform(-kPlacementHalfExtent, kPlacementHalfExtent)),
                quantize(half_extents(c)[1] + lift),
                quantize(rng.uniform(-kPlacementHalfExtent, kPlacementHalfExtent))};
    bool clear = true;
    for (const Cluster& o : spec.clusters) {
      const double r = c.bounding_radius() + o.bounding_radius() + kSeparationMargin;
      if (center_distance2(c, o) < r * r) clear = false;
    }
    if (clear) spec.clusters.push_back(c);
  }
  std::size_t used = 0;
  for (const Cluster& c : spec.clusters) used += c.points;
  const std::size_t base =
      std::max(grammar.floor_min_points,
               grammar.min_points > used ? grammar.min_points - used : 0);
  const std::size_t slack = std::min<std::size_t>(64, grammar.max_points - used - base);
  spec.floor_points = base + static_cast<std::size_t>(
                                 rng.uniform_int(0, static_cast<std::int64_t>(slack)));
  return spec;
}

Sample generate(const SceneSpec& spec, const GrammarConfig& grammar) {
  spec.validate();
  Rng rng(spec.seed);
  Sample s = sample_points(spec, rng);
  std::vector<std::size_t> order(spec.clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto& vocab = standard_vocabulary();
  for (std::size_t target : order) {
    const auto expr = choose_expression(spec.clusters, target, grammar, rng);
    if (!expr) continue;
    s.tokens = to_tokens(*expr, vocab);
    require(evaluate_expression(s.tokens, spec.clusters, vocab) ==
                std::vector<std::size_t>{target},
            "generate: expression failed the uniqueness check", ErrorKind::kData);
    s.target = target;
    std::size_t first = 0;
    for (std::size_t i = 0; i < target; ++i) first += spec.clusters[i].points;
    std::fill_n(s.gt_mask.begin() + static_cast<std::ptrdiff_t>(first),
                spec.clusters[target].points, 1);
    s.is_unique = std::count_if(spec.clusters.begin(), spec.clusters.end(),
                                [&](const Cluster& c) {
                                  return c.shape == spec.clusters[target].shape;
                                }) == 1;
    return s;
  }
  fail(ErrorKind::kData, "generate: no cluster admits an unambiguous expression");
}

Sample generate(std::uint64_t seed, const GrammarConfig& grammar) {
  grammar.validate();
  for (std::size_t attempt = 0; attempt < grammar.max_retries; ++attempt) {
    const std::uint64_t s = attempt == 0 ? seed : splitmix64(seed ^ (attempt * 0x51ed27ULL));
    try {
      return generate(random_scene(s, grammar), grammar);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kData) throw;
    }
  }
  fail(ErrorKind::kData, "generate: no valid scene within the retry budget for seed " +
                             std::to_string(seed));
}

std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t index) {
  return splitmix64(splitmix64(base_seed) + index);
}

std::vector<Sample> generate_dataset(std::uint64_t base_seed, std::size_t count,
                                     const GrammarConfig& grammar) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate(sample_seed(base_seed, i), grammar));
  return out;
}

std::string index_path(const std::string& dataset_path) {
  return dataset_path + ".index.json";
}

void save_dataset(const std::string& path, const std::vector<Sample>& samples) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kFeatureDim));
  const auto& vocab = standard_vocabulary();
  nlohmann::ordered_json index;
  index["format"] = "refseg-dataset";
  index["version"] = kFormatVersion;
  index["count"] = samples.size();
  index["samples"] = nlohmann::ordered_json::array();
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const Sample& s = samples[si];
    const std::size_t n = s.cloud.size();
    require(s.cloud.features.cols() == kFeatureDim && s.gt_mask.size() == n,
            "save_dataset: inconsistent sample " + std::to_string(si));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.tokens.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.scene.clusters.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.target));
    put_le<std::uint8_t>(out, s.is_unique ? 1 : 0);
    put_le<std::uint64_t>(out, s.scene.seed);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.scene.floor_points));
    for (const Cluster& c : s.scene.clusters) {
      put_le<std::uint8_t>(out, static_cast<std::uint8_t>(c.shape));
      put_le<std::uint8_t>(out, c.color);
      put_le<std::uint8_t>(out, static_cast<std::uint8_t>(c.size));
      for (double v : c.center) put_f64(out, v);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.points));
    }
    for (double v : s.cloud.positions.values()) put_f32(out, v);
    for (double v : s.cloud.features.values()) put_f32(out, v);
    for (std::size_t t : s.tokens) {
      require(t <= 0xffff, "save_dataset: token id exceeds 16 bits");
      put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t));
    }
    for (std::size_t b = 0; b < n; b += 8) {
      std::uint8_t byte = 0;
      for (std::size_t k = 0; k < 8 && b + k < n; ++k)
        if (s.gt_mask[b + k]) byte |= static_cast<std::uint8_t>(1u << k);
      put_le<std::uint8_t>(out, byte);
    }
    index["samples"].push_back({{"index", si},
                                {"seed", s.scene.seed},
                                {"points", n},
                                {"clusters", s.scene.clusters.size()},
                                {"target", s.target},
                                {"is_unique", s.is_unique},
                                {"expression", vocab.decode(s.tokens)}});
  }
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_dataset: cannot open " + path, ErrorKind::kData);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  std::ofstream j(index_path(path));
  require(j.good(), "save_dataset: cannot open " + index_path(path), ErrorKind::kData);
  j << index.dump(2) << "\n";
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_dataset: cannot open " + path, ErrorKind::kData);
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  for (char m : kMagic)
    require(r.get<std::uint8_t>() == static_cast<std::uint8_t>(m),
            "load_dataset: bad magic in " + path, ErrorKind::kData);
  require(r.get<std::uint32_t>() == kFormatVersion, "load_dataset: unsupported version",
          ErrorKind::kData);
  const auto count = r.get<std::uint32_t>();
  const auto fdim = r.get<std::uint32_t>();
  require(fdim == kFeatureDim, "load_dataset: unexpected feature width", ErrorKind::kData);
  std::vector<Sample> out(count);
  for (Sample& s : out) {
    const std::size_t n = r.get<std::uint32_t>();
    const std::size_t nt = r.get<std::uint32_t>();
    const std::size_t nc = r.get<std::uint32_t>();
    s.target = r.get<std::uint32_t>();
    s.is_unique = r.get<std::uint8_t>() != 0;
    s.scene.seed = r.get<std::uint64_t>();
    s.scene.floor_points = r.get<std::uint32_t>();
    s.scene.clusters.resize(nc);
    for (Cluster& c : s.scene.clusters) {
      c.shape = static_cast<Shape>(r.get<std::uint8_t>());
      c.color = r.get<std::uint8_t>();
      c.size = static_cast<SizeClass>(r.get<std::uint8_t>());
      require(static_cast<int>(c.shape) < 3 && c.color < kNumColors &&
                  static_cast<int>(c.size) < 2,
              "load_dataset: bad cluster attributes", ErrorKind::kData);
      for (double& v : c.center) v = r.f64();
      c.points = r.get<std::uint32_t>();
    }
    require(s.target < nc, "load_dataset: target out of range", ErrorKind::kData);
    s.cloud.positions = Matrix(n, 3);
    s.cloud.features = Matrix(n, kFeatureDim);
    for (double& v : s.cloud.positions.storage()) v = r.f32();
    for (double& v : s.cloud.features.storage()) v = r.f32();
    s.tokens.resize(nt);
    for (std::size_t& t : s.tokens) t = r.get<std::uint16_t>();
    s.gt_mask.assign(n, 0);
    for (std::size_t b = 0; b < n; b += 8) {
      const auto byte = r.get<std::uint8_t>();
      for (std::size_t k = 0; k < 8 && b + k < n; ++k) s.gt_mask[b + k] = (byte >> k) & 1;
    }
  }
  require(r.done(), "load_dataset: trailing bytes in " + path, ErrorKind::kData);
  return out;
}

std::array<double, 3> heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  // Piecewise-linear blue -> cyan -> green -> yellow -> red.
  constexpr std::array<double, 3> stops[5] = {
      {0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}};
  const double x = t * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(x));
  const double f = x - static_cast<double>(i);
  std::array<double, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = stops[i][k] + f * (stops[i + 1][k] - stops[i][k]);
  return c;
}

void export_ply(const std::string& path, const Matrix& positions,
                const std::vector<std::array<double, 3>>& colors) {
  require(positions.cols() == 3 && positions.rows() == colors.size(),
          "export_ply: one color per point required");
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << positions.rows()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < positions.rows(); ++i) {
    os << static_cast<float>(positions(i, 0)) << ' ' << static_cast<float>(positions(i, 1))
       << ' ' << static_cast<float>(positions(i, 2));
    for (double c : colors[i])
      os << ' ' << static_cast<int>(std::lround(255.0 * std::clamp(c, 0.0, 1.0)));
    os << '\n';
  }
  std::ofstream f(path);
  require(f.good(), "export_ply: cannot open " + path, ErrorKind::kData);
  f << os.str();
}

}  // namespace refseg::data
