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

#include "refseg/numeric/params.hpp"

#include <cmath>

#include "refseg/error.hpp"

namespace refseg {

ParamId ParamStore::add(std::string name, Matrix init, bool trainable) {
  require(!index_.contains(name), "ParamStore: duplicate parameter '" + name + "'");
  const ParamId id = params_.size();
  index_.emplace(name, id);
  params_.push_back(Param{std::move(name), std::move(init), trainable});
  return id;
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamId ParamStore::at(const std::string& name) const {
  auto id = find(name);
  require(id.has_value(), "ParamStore: no parameter '" + name + "'");
  return *id;
}

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const Param& p : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

Graph::Graph(const ParamStore& store)
    : store_(&store), leaf_(store.size(), -1) {}

ad::Var Graph::param(ParamId id) {
  require(id < leaf_.size(), "Graph::param: unknown parameter id");
  if (leaf_[id] < 0) {
    const Param& p = (*store_)[id];
    ad::Var v = p.trainable ? tape_.variable(p.value) : tape_.constant(p.value);
    leaf_[id] = v.id();
  }
  return ad::Var(&tape_, leaf_[id]);
}

std::vector<Matrix> Graph::gradients() const {
  std::vector<Matrix> out;
  out.reserve(leaf_.size());
  for (std::size_t i = 0; i < leaf_.size(); ++i) {
    const Matrix& v = (*store_)[i].value;
    if (leaf_[i] >= 0 && tape_.has_grad(leaf_[i]))
      out.push_back(tape_.out_grad(leaf_[i]));
    else
      out.emplace_back(v.rows(), v.cols());
  }
  return out;
}

LinearLayer LinearLayer::create(ParamStore& store, const std::string& name,
                                std::size_t in, std::size_t out, Rng& rng,
                                bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix w(out, in);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.has_bias = with_bias;
  l.weight = store.add(name + ".weight", std::move(w));
  if (with_bias) {
    Matrix b(1, out);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
    l.bias = store.add(name + ".bias", std::move(b));
  }
  return l;
}

ad::Var LinearLayer::operator()(Graph& g, ad::Var x) const {
  return ad::linear(x, g.param(weight), has_bias ? g.param(bias) : ad::Var{});
}

LayerNormLayer LayerNormLayer::create(ParamStore& store,
                                      const std::string& name,
                                      std::size_t dim) {
  LayerNormLayer l;
  l.dim = dim;
  l.gain = store.add(name + ".gain", Matrix(1, dim, 1.0));
  l.bias = store.add(name + ".bias", Matrix(1, dim, 0.0));
  return l;
}

ad::Var LayerNormLayer::operator()(Graph& g, ad::Var x) const {
  return ad::layer_norm(x, g.param(gain), g.param(bias));
}

Mlp2 Mlp2::create(ParamStore& store, const std::string& name, std::size_t in,
                  std::size_t hidden, std::size_t out, Rng& rng) {
  Mlp2 m;
  m.first = LinearLayer::create(store, name + ".0", in, hidden, rng);
  m.second = LinearLayer::create(store, name + ".1", hidden, out, rng);
  return m;
}

ad::Var Mlp2::operator()(Graph& g, ad::Var x) const {
  return second(g, ad::relu(first(g, x)));
}

}  // namespace refseg
