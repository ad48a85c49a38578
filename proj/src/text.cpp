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

#include "refseg/text.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "refseg/error.hpp"

namespace refseg::text {

namespace {

constexpr std::pair<Category, std::string_view> kCategoryNames[] = {
    {Category::kColor, "color"},       {Category::kShape, "shape"},
    {Category::kSize, "size"},         {Category::kRelation, "relation"},
    {Category::kName, "name"},         {Category::kFiller, "filler"},
};

}  // namespace

std::string_view category_name(Category c) {
  for (const auto& [cat, name] : kCategoryNames)
    if (cat == c) return name;
  return "filler";
}

Category parse_category(std::string_view s) {
  for (const auto& [cat, name] : kCategoryNames)
    if (name == s) return cat;
  fail(ErrorKind::kData, "vocabulary: unknown category '" + std::string(s) + "'");
}

std::size_t Vocabulary::add(const std::string& token, Category category) {
  require(!token.empty() && token.find_first_of(" \t\n") == std::string::npos,
          "vocabulary: invalid token '" + token + "'");
  require(!index_.contains(token), "vocabulary: duplicate token '" + token + "'");
  const std::size_t id = tokens_.size();
  index_.emplace(token, id);
  tokens_.push_back(token);
  categories_.push_back(category);
  return id;
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto id = find(token);
  require(id.has_value(), "unknown token '" + std::string(token) + "'",
          ErrorKind::kData);
  return *id;
}

const std::string& Vocabulary::token(std::size_t id) const {
  require(id < tokens_.size(), "vocabulary: id out of range", ErrorKind::kData);
  return tokens_[id];
}

Category Vocabulary::category(std::size_t id) const {
  require(id < categories_.size(), "vocabulary: id out of range",
          ErrorKind::kData);
  return categories_[id];
}

std::vector<std::size_t> Vocabulary::encode(std::string_view sentence) const {
  std::vector<std::size_t> ids;
  std::istringstream in{std::string(sentence)};
  std::string tok;
  while (in >> tok) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += category_name(categories_[i]);
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos,
            "vocabulary: expected token<TAB>category, got '" + line + "'",
            ErrorKind::kData);
    v.add(line.substr(0, tab), parse_category(line.substr(tab + 1)));
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path, ErrorKind::kData);
  out << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path, ErrorKind::kData);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Matrix positional_encoding(std::size_t length, std::size_t dim) {
  Matrix pe(length, dim);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t j = 0; j < dim; ++j) {
      const double freq = std::pow(
          10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(dim));
      pe(p, j) = (j % 2 == 0) ? std::sin(static_cast<double>(p) * freq)
                              : std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

TextEncoder TextEncoder::create(ParamStore& store, const std::string& name,
                                std::size_t vocab_size,
                                const TextConfig& config, Rng& rng) {
  TextEncoder enc;
  enc.vocab_size = vocab_size;
  enc.config = config;
  enc.table = store.add(name + ".table",
                        rng.normal_matrix(vocab_size, config.dim, 1.0));
  return enc;
}

TokenSequence TextEncoder::embed(Graph& g,
                                 const std::vector<std::size_t>& ids) const {
  require(!ids.empty(), "embed: empty token sequence");
  for (std::size_t id : ids)
    require(id < vocab_size, "embed: unknown token id " + std::to_string(id),
            ErrorKind::kData);
  TokenSequence seq;
  seq.ids = ids;
  ad::Var rows = ad::gather_rows(g.param(table), ids);
  if (config.positional)
    rows = ad::add(rows, g.constant(positional_encoding(ids.size(), config.dim)));
  seq.words = rows;
  seq.sentence =
      config.pooling == Pooling::kMean ? ad::mean_rows(rows) : ad::max_rows(rows);
  return seq;
}

}  // namespace refseg::text
