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
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refseg/data.hpp"
#include "refseg/losses.hpp"
#include "refseg/model.hpp"

namespace refseg::train {

struct TrainConfig {
  double lr = 1e-3;
  bool cosine = true;
  std::size_t warmup = 0;  // linear ramp over the first steps
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip = 0.0;  // global gradient-norm clip, 0 disables
  std::size_t log_every = 10;
  bool augment = true;  // random x mirror and color permutation per sample

  void validate() const;
};

/// Learning rate of a 0-based step: linear warmup, then cosine decay to
/// zero at `steps` (or constant when cosine is off).
double learning_rate(const TrainConfig& cfg, std::size_t step);

/// Adam moments with decoupled weight decay:
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay p)
class AdamW {
 public:
  AdamW(const ParamStore& store, const TrainConfig& cfg);
  void step(ParamStore& store, const std::vector<Matrix>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// A sample with its encoder geometry computed once.
struct Prepared {
  const data::Sample* sample = nullptr;
  encoder::EncoderPlan plan;
  std::vector<double> target;  // gt mask as 0/1 doubles
};

/// The result points into `samples`, which must outlive it.
std::vector<Prepared> prepare(const std::vector<data::Sample>& samples,
                              const encoder::EncoderConfig& cfg);
std::vector<Prepared> prepare(std::vector<data::Sample>&&, const encoder::EncoderConfig&) = delete;

struct CurvePoint {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // batch mean of the total objective
  double match = 0.0;
  double contrastive = 0.0;
  double grad_norm = 0.0;
};

using Progress = std::function<void(const CurvePoint&)>;

struct TrainResult {
  std::vector<CurvePoint> curve;
};

/// Label-preserving scene transforms that keep the FPS/k-NN geometry.
/// Mirroring x swaps left_of and right_of; the yaw (radians about the up
/// axis, applied after the mirror) is dropped when it would change the
/// referent. A color permutation recolors clusters and color words alike.
struct Augmentation {
  bool mirror = false;
  double yaw = 0.0;
  std::array<std::uint8_t, data::kNumColors> colors{0, 1, 2, 3, 4, 5};
};

Augmentation draw_augmentation(Rng& rng);

struct AugmentedInput {
  encoder::EncoderPlan plan;
  std::vector<std::size_t> tokens;
  Augmentation applied;
};

AugmentedInput apply_augmentation(const Prepared& p, const Augmentation& a);

/// Loss terms of one sample as plain numbers (the tape is gone by then).
struct SampleTerms {
  double match = 0.0;
  double contrastive = 0.0;
  double cls = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  std::size_t assigned = 0;
};

/// Loss and gradients of one sample under live noise.
double sample_loss(const model::Model& model, const Prepared& p,
                   const losses::LossWeights& weights, NoiseSource& noise,
                   std::vector<Matrix>* grads, SampleTerms* terms = nullptr);
double sample_loss(const model::Model& model, const AugmentedInput& input,
                   std::span<const double> target, const losses::LossWeights& weights,
                   NoiseSource& noise, std::vector<Matrix>* grads,
                   SampleTerms* terms = nullptr);

/// Seed-fixed epoch shuffles, batch-mean gradients, AdamW updates.
/// Throws kNumeric with the step and sample on a non-finite loss.
TrainResult train(model::Model& model, const std::vector<Prepared>& data,
                  const TrainConfig& cfg, const losses::LossWeights& weights,
                  const Progress& progress = {});

/// |a & b| / |a | b|; 1 when both are empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

struct SplitMetrics {
  std::size_t count = 0;
  double miou = 0.0;
  double acc25 = 0.0;  // fraction with IoU > 0.25
  double acc50 = 0.0;  // fraction with IoU > 0.5

  friend bool operator==(const SplitMetrics&, const SplitMetrics&) = default;
};

struct EvalReport {
  SplitMetrics overall;
  SplitMetrics unique;
  SplitMetrics multiple;
  std::vector<double> ious;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport summarize(std::span<const double> ious,
                     std::span<const std::uint8_t> unique);

struct Inference {
  geometry::Mask mask;        // selected query, probability > 0.5
  std::size_t selected = 0;
  std::vector<double> scores;
  Matrix mask_logits;         // all queries
  Matrix binding;             // primitive-word assignment (if any)
  Matrix primitive_response;  // N_o x N, decoded primitives . F_0'^T
};

Inference infer(const model::Model& model, const Prepared& p);
EvalReport evaluate(const model::Model& model, const std::vector<Prepared>& data);

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);
void write_report_csv(const std::string& path, const EvalReport& report);

/// Versioned header, embedded configuration text, then named tensors as
/// little-endian 64-bit floats in store order.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

void save_checkpoint(const std::string& path, const model::Model& model,
                     const std::string& config_text);
Checkpoint read_checkpoint(const std::string& path);
/// Copies tensors into the store by name; names and shapes must match.
void load_parameters(model::Model& model, const Checkpoint& ckpt);

}  // namespace refseg::train
