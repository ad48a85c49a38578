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
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refseg/numeric/params.hpp"

namespace refseg::text {

enum class Category { kColor, kShape, kSize, kRelation, kName, kFiller };

std::string_view category_name(Category c);
Category parse_category(std::string_view s);

/// Closed vocabulary with dense ids 0..V-1 and one category per token.
/// Serialized one token per line as `token<TAB>category`.
class Vocabulary {
 public:
  std::size_t add(const std::string& token, Category category);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<std::size_t> find(std::string_view token) const;
  std::size_t id(std::string_view token) const;  // throws on unknown token
  const std::string& token(std::size_t id) const;
  Category category(std::size_t id) const;

  /// Whitespace-separated tokens to ids; unknown tokens throw.
  std::vector<std::size_t> encode(std::string_view sentence) const;
  std::string decode(const std::vector<std::size_t>& ids) const;

  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.categories_ == b.categories_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<Category> categories_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Pooling { kMean, kMax };

struct TextConfig {
  std::size_t dim = 32;
  bool positional = true;
  Pooling pooling = Pooling::kMean;
};

/// Tokenized expression: per-word embeddings (N_t x D) and pooled sentence
/// embedding (1 x D), both on the graph's tape.
struct TokenSequence {
  std::vector<std::size_t> ids;
  ad::Var words;
  ad::Var sentence;

  std::size_t length() const noexcept { return ids.size(); }
};

/// Sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos.
Matrix positional_encoding(std::size_t length, std::size_t dim);

/// Learned embedding table standing in for a pretrained language encoder.
struct TextEncoder {
  ParamId table = 0;
  std::size_t vocab_size = 0;
  TextConfig config;

  static TextEncoder create(ParamStore& store, const std::string& name,
                            std::size_t vocab_size, const TextConfig& config,
                            Rng& rng);
  /// row j = table[id_j] + PE(j); sentence = pool over rows.
  TokenSequence embed(Graph& g, const std::vector<std::size_t>& ids) const;
};

}  // namespace refseg::text
