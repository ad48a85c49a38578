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
#include <string>
#include <vector>

#include "refseg/encoder.hpp"
#include "refseg/numeric/params.hpp"
#include "refseg/text.hpp"

namespace refseg::decoder {

enum class SubBlock { kVision, kText, kSelf, kFeedForward };

std::string sub_block_order_name(const std::array<SubBlock, 4>& order);
std::array<SubBlock, 4> parse_sub_block_order(const std::string& s);

struct DecoderConfig {
  std::size_t dim = 32;
  std::size_t repeats = 2;  // L; the 4-layer stack runs L times
  std::size_t heads = 4;
  std::size_t queries = 4;  // N_c
  std::size_t ffn_hidden = 64;
  std::array<SubBlock, 4> order = {SubBlock::kVision, SubBlock::kText,
                                   SubBlock::kSelf, SubBlock::kFeedForward};

  void validate() const;
};

/// Multi-head scaled dot-product attention with input/output projections.
struct MultiHeadAttention {
  LinearLayer q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name,
                                   std::size_t dim, std::size_t heads, Rng& rng);
  /// out(concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h).
  ad::Var operator()(Graph& g, ad::Var queries, ad::Var memory) const;
};

/// Pre-norm layer: x <- x + block(LN(x)) for each sub-block in order.
struct DecoderLayer {
  LayerNormLayer vision_norm, text_norm, self_norm, ffn_norm;
  MultiHeadAttention vision_attn, text_attn, self_attn;
  Mlp2 ffn;

  static DecoderLayer create(ParamStore& store, const std::string& name,
                             const DecoderConfig& cfg, Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x, ad::Var vision, ad::Var words,
                     const DecoderConfig& cfg) const;
};

struct DecoderParams {
  std::array<DecoderLayer, 4> layers;  // shared across the L repeats

  static DecoderParams create(ParamStore& store, const std::string& name,
                              const DecoderConfig& cfg, Rng& rng);
};

/// 4L layers; layer l attends to fused scale (l mod 4) + 1.
ad::Var decode_primitives(
    Graph& g, ad::Var primitives,
    const std::array<encoder::ScaleFeatures, encoder::kNumScales>& scales,
    const text::TokenSequence& text, const DecoderConfig& cfg,
    const DecoderParams& params);

struct ObjectClusterParams {
  ParamId offsets = 0;  // N_c x D learned per-query offsets
  LinearLayer sentence_proj;
  LayerNormLayer prim_norm, cross_norm, self_norm, ffn_norm, final_norm;
  MultiHeadAttention prim_self, cross, query_self;
  Mlp2 ffn;

  static ObjectClusterParams create(ParamStore& store, const std::string& name,
                                    const DecoderConfig& cfg, Rng& rng);
};

/// Sentence-initialized object queries aggregated over the primitives.
ad::Var initial_object_queries(Graph& g, ad::Var sentence,
                               const ObjectClusterParams& params);
ad::Var object_cluster(Graph& g, ad::Var primitives, ad::Var sentence,
                       const ObjectClusterParams& params);

struct Prediction {
  ad::Var object_embeddings;  // N_c x D
  ad::Var mask_logits;        // N_c x N
  ad::Var class_logits;       // N_c x 2, column 0 = target, 1 = no-object
  std::vector<double> scores; // target-class probability per query
  std::size_t selected = 0;   // argmax score, ties to the lowest index
};

struct MaskHeadParams {
  Mlp2 mask_mlp;
  LinearLayer classifier;

  static MaskHeadParams create(ParamStore& store, const std::string& name,
                               std::size_t dim, Rng& rng);
};

Prediction mask_head(Graph& g, ad::Var object_embeddings,
                     ad::Var mask_features, const MaskHeadParams& params);

}  // namespace refseg::decoder
