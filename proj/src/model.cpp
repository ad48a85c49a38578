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

#include "refseg/model.hpp"

#include "refseg/error.hpp"

namespace refseg::model {

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  c.text.dim = c.encoder.dim = c.lpc.dim = c.decoder.dim = dim;
  if (!toggles.gegwa) c.encoder.fusion_mode = encoder::FusionMode::kNone;
  if (!toggles.background_token) c.encoder.use_background_token = false;
  if (!toggles.gaussian_init) c.lpc.sample = lpc::SampleMode::kMuOnly;
  if (!toggles.gumbel) c.lpc.gumbel = false;
  return c;
}

void ModelConfig::validate() const {
  require(dim >= 1, "model: dim must be >= 1", ErrorKind::kConfig);
  require(vocab_size >= 1, "model: vocabulary is empty", ErrorKind::kConfig);
  require(lpc.primitives >= 1, "model: primitives must be >= 1", ErrorKind::kConfig);
  require(lpc.temperature > 0, "model: temperature must be positive", ErrorKind::kConfig);
  require(lpc.initial_sigma > 0, "model: initial sigma must be positive",
          ErrorKind::kConfig);
  require(encoder.input_features >= 1, "model: input_features must be >= 1",
          ErrorKind::kConfig);
  resolved().decoder.validate();
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config.resolved();
  const ModelConfig& c = m.config;
  Rng rng(seed);
  m.text = text::TextEncoder::create(m.store, "text", c.vocab_size, c.text, rng);
  m.encoder = encoder::EncoderParams::create(m.store, "encoder", c.encoder, rng);
  m.primitives = lpc::PrimitiveParams::create(m.store, "lpc", c.lpc, rng);
  m.decoder = decoder::DecoderParams::create(m.store, "decoder", c.decoder, rng);
  m.ocm = decoder::ObjectClusterParams::create(m.store, "ocm", c.decoder, rng);
  m.query_norm = LayerNormLayer::create(m.store, "query_norm", c.dim);
  m.head = decoder::MaskHeadParams::create(m.store, "head", c.dim, rng);
  return m;
}

Forward forward(Graph& g, const Model& model, const encoder::EncoderPlan& plan,
                const std::vector<std::size_t>& tokens, NoiseSource& noise,
                Mode mode) {
  const ModelConfig& c = model.config;
  require(!tokens.empty(), "forward: empty expression", ErrorKind::kData);
  Forward f;
  f.text = model.text.embed(g, tokens);
  f.encoded = encoder::encode(g, plan, f.text, c.encoder, model.encoder);
  const ad::Var point_features = f.encoded.fused[0].features;

  lpc::LpcConfig lc = c.lpc;
  NoiseSource quiet = NoiseSource::zero();
  NoiseSource& draw = mode == Mode::kEval ? quiet : noise;
  if (mode == Mode::kEval) lc.sample = lpc::SampleMode::kMuOnly;
  switch (lc.query) {
    case lpc::QueryMode::kPrimitives: {
      const ad::Var mu = g.param(model.primitives.mu);
      f.primitives = lpc::sample_primitives(mu, model.primitives.sigma(g), draw, lc.sample);
      f.bound = c.toggles.lpc ? lpc::construct(g, f.primitives, f.text, model.primitives,
                                               lc, draw, &f.binding)
                              : f.primitives;
      break;
    }
    case lpc::QueryMode::kFps:
      f.primitives = lpc::fps_query_baseline(point_features, plan.scales[0].positions,
                                             lc.primitives);
      f.bound = f.primitives;
      break;
    case lpc::QueryMode::kTopK:
      f.primitives =
          lpc::topk_query_baseline(point_features, f.text.sentence, lc.primitives);
      f.bound = f.primitives;
      break;
  }
  f.decoded = decoder::decode_primitives(g, f.bound, f.encoded.fused, f.text, c.decoder,
                                         model.decoder);
  const ad::Var objects = c.toggles.ocm
                              ? decoder::object_cluster(g, f.decoded, f.text.sentence,
                                                        model.ocm)
                              : model.query_norm(g, f.decoded);
  f.prediction = decoder::mask_head(g, objects, point_features, model.head);
  return f;
}

}  // namespace refseg::model
