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
#include <unordered_map>
#include <vector>

#include "refseg/numeric/autodiff.hpp"
#include "refseg/numeric/matrix.hpp"
#include "refseg/numeric/rng.hpp"

namespace refseg {

using ParamId = std::size_t;

struct Param {
  std::string name;
  Matrix value;
  bool trainable = true;
};

/// Named registry of model tensors. Iteration order is registration order,
/// so gradients, checkpoints and optimizer state line up by index.
class ParamStore {
 public:
  ParamId add(std::string name, Matrix init, bool trainable = true);

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](ParamId id) { return params_[id]; }
  const Param& operator[](ParamId id) const { return params_[id]; }
  std::optional<ParamId> find(const std::string& name) const;
  ParamId at(const std::string& name) const;

  std::size_t trainable_scalars() const;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, ParamId> index_;
};

/// One forward/backward evaluation against a ParamStore. Parameters enter
/// the tape lazily as leaves the first time a layer asks for them.
class Graph {
 public:
  explicit Graph(const ParamStore& store);

  ad::Tape& tape() noexcept { return tape_; }
  ad::Var param(ParamId id);
  ad::Var constant(Matrix value) { return tape_.constant(std::move(value)); }

  void backward(ad::Var loss) { tape_.backward(loss); }
  /// Gradient per parameter (zeros for parameters the loss never touched).
  std::vector<Matrix> gradients() const;

 private:
  const ParamStore* store_;
  ad::Tape tape_;
  std::vector<int> leaf_;  // tape node per parameter, -1 if unused
};

/// y = x W^T + b with W stored out x in.
struct LinearLayer {
  ParamId weight = 0;
  ParamId bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  bool has_bias = true;

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization for weight and bias.
  static LinearLayer create(ParamStore& store, const std::string& name,
                            std::size_t in, std::size_t out, Rng& rng,
                            bool with_bias = true);
  ad::Var operator()(Graph& g, ad::Var x) const;
};

struct LayerNormLayer {
  ParamId gain = 0;
  ParamId bias = 0;
  std::size_t dim = 0;

  static LayerNormLayer create(ParamStore& store, const std::string& name,
                               std::size_t dim);
  ad::Var operator()(Graph& g, ad::Var x) const;
};

/// Two linear layers with a ReLU between them.
struct Mlp2 {
  LinearLayer first;
  LinearLayer second;

  static Mlp2 create(ParamStore& store, const std::string& name,
                     std::size_t in, std::size_t hidden, std::size_t out,
                     Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;
};

}  // namespace refseg
