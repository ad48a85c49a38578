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

#include "refseg/decoder.hpp"

#include <cmath>

#include "refseg/error.hpp"
#include "refseg/numeric/kernels.hpp"

namespace refseg::decoder {

namespace {

constexpr std::pair<SubBlock, char> kBlockCodes[] = {
    {SubBlock::kVision, 'v'},
    {SubBlock::kText, 't'},
    {SubBlock::kSelf, 's'},
    {SubBlock::kFeedForward, 'f'},
};

}  // namespace

std::string sub_block_order_name(const std::array<SubBlock, 4>& order) {
  std::string s;
  for (SubBlock b : order)
    for (const auto& [blk, code] : kBlockCodes)
      if (blk == b) s += code;
  return s;
}

std::array<SubBlock, 4> parse_sub_block_order(const std::string& s) {
  require(s.size() == 4, "decoder order must be a permutation of 'vtsf'",
          ErrorKind::kConfig);
  std::array<SubBlock, 4> order{};
  std::array<bool, 4> seen{};
  for (std::size_t i = 0; i < 4; ++i) {
    bool found = false;
    for (std::size_t c = 0; c < 4; ++c)
      if (kBlockCodes[c].second == s[i] && !seen[c]) {
        order[i] = kBlockCodes[c].first;
        seen[c] = true;
        found = true;
      }
    require(found, "decoder order must be a permutation of 'vtsf'",
            ErrorKind::kConfig);
  }
  return order;
}

void DecoderConfig::validate() const {
  require(repeats >= 1, "decoder: repeats must be >= 1", ErrorKind::kConfig);
  require(queries >= 1, "decoder: queries must be >= 1", ErrorKind::kConfig);
  require(heads >= 1 && dim % heads == 0,
          "decoder: dim must be divisible by heads", ErrorKind::kConfig);
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store,
                                              const std::string& name,
                                              std::size_t dim,
                                              std::size_t heads, Rng& rng) {
  require(heads >= 1 && dim % heads == 0, "attention: dim % heads != 0",
          ErrorKind::kConfig);
  MultiHeadAttention a;
  a.heads = heads;
  a.q = LinearLayer::create(store, name + ".q", dim, dim, rng);
  a.k = LinearLayer::create(store, name + ".k", dim, dim, rng);
  a.v = LinearLayer::create(store, name + ".v", dim, dim, rng);
  a.out = LinearLayer::create(store, name + ".out", dim, dim, rng);
  return a;
}

ad::Var MultiHeadAttention::operator()(Graph& g, ad::Var queries,
                                       ad::Var memory) const {
  ad::Var qp = q(g, queries);
  ad::Var kp = k(g, memory);
  ad::Var vp = v(g, memory);
  const std::size_t dh = qp.cols() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  if (heads == 1) {
    ad::Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qp, kp), inv));
    return out(g, ad::matmul(w, vp));
  }
  std::vector<ad::Var> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(qp, h * dh, dh);
    ad::Var kh = ad::slice_cols(kp, h * dh, dh);
    ad::Var vh = ad::slice_cols(vp, h * dh, dh);
    ad::Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv));
    parts.push_back(ad::matmul(w, vh));
  }
  return out(g, ad::concat_cols(parts));
}

DecoderLayer DecoderLayer::create(ParamStore& store, const std::string& name,
                                  const DecoderConfig& cfg, Rng& rng) {
  DecoderLayer l;
  const std::size_t d = cfg.dim;
  l.vision_norm = LayerNormLayer::create(store, name + ".vision_norm", d);
  l.vision_attn = MultiHeadAttention::create(store, name + ".vision", d, cfg.heads, rng);
  l.text_norm = LayerNormLayer::create(store, name + ".text_norm", d);
  l.text_attn = MultiHeadAttention::create(store, name + ".text", d, cfg.heads, rng);
  l.self_norm = LayerNormLayer::create(store, name + ".self_norm", d);
  l.self_attn = MultiHeadAttention::create(store, name + ".self", d, cfg.heads, rng);
  l.ffn_norm = LayerNormLayer::create(store, name + ".ffn_norm", d);
  l.ffn = Mlp2::create(store, name + ".ffn", d, cfg.ffn_hidden, d, rng);
  return l;
}

ad::Var DecoderLayer::operator()(Graph& g, ad::Var x, ad::Var vision,
                                 ad::Var words,
                                 const DecoderConfig& cfg) const {
  for (SubBlock b : cfg.order) {
    switch (b) {
      case SubBlock::kVision:
        x = ad::add(x, vision_attn(g, vision_norm(g, x), vision));
        break;
      case SubBlock::kText:
        x = ad::add(x, text_attn(g, text_norm(g, x), words));
        break;
      case SubBlock::kSelf: {
        ad::Var h = self_norm(g, x);
        x = ad::add(x, self_attn(g, h, h));
        break;
      }
      case SubBlock::kFeedForward:
        x = ad::add(x, ffn(g, ffn_norm(g, x)));
        break;
    }
  }
  return x;
}

DecoderParams DecoderParams::create(ParamStore& store, const std::string& name,
                                    const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  DecoderParams p;
  for (std::size_t i = 0; i < 4; ++i)
    p.layers[i] = DecoderLayer::create(store, name + ".layer" + std::to_string(i), cfg, rng);
  return p;
}

ad::Var decode_primitives(
    Graph& g, ad::Var primitives,
    const std::array<encoder::ScaleFeatures, encoder::kNumScales>& scales,
    const text::TokenSequence& text, const DecoderConfig& cfg,
    const DecoderParams& params) {
  cfg.validate();
  ad::Var x = primitives;
  for (std::size_t l = 0; l < 4 * cfg.repeats; ++l) {
    const std::size_t s = (l % 4) + 1;
    x = params.layers[l % 4](g, x, scales[s].features, text.words, cfg);
  }
  return x;
}

ObjectClusterParams ObjectClusterParams::create(ParamStore& store,
                                                const std::string& name,
                                                const DecoderConfig& cfg,
                                                Rng& rng) {
  cfg.validate();
  ObjectClusterParams p;
  const std::size_t d = cfg.dim;
  p.offsets = store.add(name + ".offsets", rng.normal_matrix(cfg.queries, d, 0.1));
  p.sentence_proj = LinearLayer::create(store, name + ".sentence", d, d, rng);
  p.prim_norm = LayerNormLayer::create(store, name + ".prim_norm", d);
  p.prim_self = MultiHeadAttention::create(store, name + ".prim_self", d, cfg.heads, rng);
  p.cross_norm = LayerNormLayer::create(store, name + ".cross_norm", d);
  p.cross = MultiHeadAttention::create(store, name + ".cross", d, cfg.heads, rng);
  p.self_norm = LayerNormLayer::create(store, name + ".self_norm", d);
  p.query_self = MultiHeadAttention::create(store, name + ".query_self", d, cfg.heads, rng);
  p.ffn_norm = LayerNormLayer::create(store, name + ".ffn_norm", d);
  p.ffn = Mlp2::create(store, name + ".ffn", d, cfg.ffn_hidden, d, rng);
  p.final_norm = LayerNormLayer::create(store, name + ".final_norm", d);
  return p;
}

ad::Var initial_object_queries(Graph& g, ad::Var sentence,
                               const ObjectClusterParams& params) {
  ad::Var offsets = g.param(params.offsets);
  ad::Var proj = params.sentence_proj(g, sentence);
  return ad::add(offsets, ad::repeat_rows(proj, offsets.rows()));
}

ad::Var object_cluster(Graph& g, ad::Var primitives, ad::Var sentence,
                       const ObjectClusterParams& params) {
  ad::Var p = params.prim_norm(g, primitives);
  ad::Var enriched = ad::add(primitives, params.prim_self(g, p, p));
  ad::Var q = initial_object_queries(g, sentence, params);
  q = ad::add(q, params.cross(g, params.cross_norm(g, q), enriched));
  ad::Var h = params.self_norm(g, q);
  q = ad::add(q, params.query_self(g, h, h));
  q = ad::add(q, params.ffn(g, params.ffn_norm(g, q)));
  return params.final_norm(g, q);
}

MaskHeadParams MaskHeadParams::create(ParamStore& store,
                                      const std::string& name,
                                      std::size_t dim, Rng& rng) {
  MaskHeadParams p;
  p.mask_mlp = Mlp2::create(store, name + ".mask", dim, dim, dim, rng);
  p.classifier = LinearLayer::create(store, name + ".cls", dim, 2, rng);
  return p;
}

Prediction mask_head(Graph& g, ad::Var object_embeddings,
                     ad::Var mask_features, const MaskHeadParams& params) {
  require(object_embeddings.cols() == mask_features.cols(),
          "mask_head: embedding/feature dimension mismatch");
  Prediction pred;
  pred.object_embeddings = object_embeddings;
  ad::Var embed = params.mask_mlp(g, object_embeddings);
  pred.mask_logits = ad::matmul_nt(embed, mask_features);
  pred.class_logits = params.classifier(g, object_embeddings);
  const Matrix probs = softmax(pred.class_logits.value(), Axis::kCols);
  pred.scores.resize(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    pred.scores[i] = probs(i, 0);
    if (pred.scores[i] > pred.scores[pred.selected]) pred.selected = i;
  }
  return pred;
}

}  // namespace refseg::decoder
