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
#include <cstdint>
#include <vector>

#include "refseg/decoder.hpp"
#include "refseg/encoder.hpp"
#include "refseg/lpc.hpp"
#include "refseg/text.hpp"

namespace refseg::model {

/// Component switches for ablations. Off means:
///   gegwa            no language fusion inside the encoder
///   lpc              sampled primitives go to the decoder unbound to words
///   ocm              decoded primitives serve as object queries
///   background_token plain word softmax in the fusion
///   gaussian_init    primitives are their means (no sampling)
///   gumbel           plain softmax binding of primitives to words
struct Toggles {
  bool gegwa = true;
  bool lpc = true;
  bool ocm = true;
  bool background_token = true;
  bool gaussian_init = true;
  bool gumbel = true;

  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t vocab_size = 0;
  text::TextConfig text;
  encoder::EncoderConfig encoder;
  lpc::LpcConfig lpc;
  decoder::DecoderConfig decoder;
  Toggles toggles;

  /// Copies `dim` into every sub-config and applies the toggles.
  ModelConfig resolved() const;
  void validate() const;
};

struct Model {
  ModelConfig config;  // resolved
  ParamStore store;
  text::TextEncoder text;
  encoder::EncoderParams encoder;
  lpc::PrimitiveParams primitives;
  decoder::DecoderParams decoder;
  decoder::ObjectClusterParams ocm;
  LayerNormLayer query_norm;  // object queries without the cluster module
  decoder::MaskHeadParams head;

  static Model create(const ModelConfig& config, std::uint64_t seed);
};

enum class Mode { kTrain, kEval };

struct Forward {
  text::TokenSequence text;
  encoder::EncoderOutput encoded;
  ad::Var primitives;  // O (or baseline queries)
  ad::Var bound;       // O' entering the decoder
  ad::Var decoded;     // O'' after the decoder
  lpc::ConstructTrace binding;
  decoder::Prediction prediction;
};

/// Full pipeline for one scene. In eval mode primitives are their means
/// and the binding uses no Gumbel noise, so the output is deterministic.
Forward forward(Graph& g, const Model& model, const encoder::EncoderPlan& plan,
                const std::vector<std::size_t>& tokens, NoiseSource& noise,
                Mode mode);

}  // namespace refseg::model
