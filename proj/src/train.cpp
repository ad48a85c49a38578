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

#include "refseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <sstream>

#include "refseg/error.hpp"

namespace refseg::train {

void TrainConfig::validate() const {
  require(steps >= 1, "train: steps must be >= 1", ErrorKind::kConfig);
  require(batch >= 1, "train: batch must be >= 1", ErrorKind::kConfig);
  require(lr >= 0 && std::isfinite(lr), "train: lr must be finite and >= 0",
          ErrorKind::kConfig);
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
          "train: betas must lie in [0, 1)", ErrorKind::kConfig);
  require(eps > 0, "train: eps must be positive", ErrorKind::kConfig);
  require(weight_decay >= 0 && clip >= 0, "train: decay and clip must be >= 0",
          ErrorKind::kConfig);
  require(log_every >= 1, "train: log_every must be >= 1", ErrorKind::kConfig);
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
  if (!cfg.cosine || cfg.steps <= cfg.warmup) return cfg.lr;
  const double t = static_cast<double>(step - cfg.warmup) /
                   static_cast<double>(cfg.steps - cfg.warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

AdamW::AdamW(const ParamStore& store, const TrainConfig& cfg) : cfg_(cfg) {
  for (const Param& p : store) {
    m_.emplace_back(p.value.rows(), p.value.cols());
    v_.emplace_back(p.value.rows(), p.value.cols());
  }
}

void AdamW::step(ParamStore& store, const std::vector<Matrix>& grads, double lr) {
  require(grads.size() == store.size() && m_.size() == store.size(),
          "adamw: gradient list does not match the parameter store");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    if (!p.trainable) continue;
    require(grads[i].same_shape(p.value), "adamw: gradient shape mismatch for " + p.name);
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = grads[i][k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps) +
                            cfg_.weight_decay * p.value[k];
      p.value[k] -= lr * update;
    }
  }
}

std::vector<Prepared> prepare(const std::vector<data::Sample>& samples,
                              const encoder::EncoderConfig& cfg) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const data::Sample& s : samples) {
    Prepared p;
    p.sample = &s;
    p.plan = encoder::plan_encoder(s.cloud, cfg);
    p.target.assign(s.gt_mask.begin(), s.gt_mask.end());
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

double run_loss(const model::Model& model, const encoder::EncoderPlan& plan,
                const std::vector<std::size_t>& tokens, std::span<const double> target,
                const losses::LossWeights& weights, NoiseSource& noise,
                std::vector<Matrix>* grads, SampleTerms* terms) {
  Graph g(model.store);
  const model::Forward f = model::forward(g, model, plan, tokens, noise, model::Mode::kTrain);
  const losses::LossTerms t = losses::total_loss(f.prediction, f.text.sentence, target, weights);
  const double value = t.total.item();
  if (grads && std::isfinite(value)) {
    g.backward(t.total);
    *grads = g.gradients();
  }
  if (terms)
    *terms = {t.match.item(), t.contrastive.item(), t.cls, t.bce, t.dice, t.matching.assigned};
  return value;
}

}  // namespace

Augmentation draw_augmentation(Rng& rng) {
  Augmentation a;
  a.mirror = rng.uniform() < 0.5;
  a.yaw = rng.uniform() * 2.0 * std::numbers::pi;
  rng.shuffle(a.colors);
  return a;
}

namespace {

// Mirror x, then rotate about y: x' = c x + s z, z' = -s x + c z.
struct PlanarTransform {
  double sign = 1.0, c = 1.0, s = 0.0;

  void apply(double& x, double& z) const {
    const double mx = sign * x;
    const double nx = c * mx + s * z;
    z = -s * mx + c * z;
    x = nx;
  }
  void apply_rows(Matrix& m, std::size_t xcol, std::size_t zcol) const {
    for (std::size_t i = 0; i < m.rows(); ++i) apply(m(i, xcol), m(i, zcol));
  }
};

PlanarTransform planar(bool mirror, double yaw) {
  return {mirror ? -1.0 : 1.0, std::cos(yaw), std::sin(yaw)};
}

}  // namespace

AugmentedInput apply_augmentation(const Prepared& p, const Augmentation& a) {
  const data::Sample& s = *p.sample;
  AugmentedInput out{p.plan, s.tokens, a};

  const auto& vocab = data::standard_vocabulary();
  std::array<std::size_t, data::kNumColors> color_ids{};
  for (std::size_t k = 0; k < data::kNumColors; ++k) color_ids[k] = vocab.id(data::color_name(k));
  const std::size_t left = vocab.id("left_of"), right = vocab.id("right_of");
  for (std::size_t& t : out.tokens) {
    if (a.mirror && (t == left || t == right)) {
      t = t == left ? right : left;
      continue;
    }
    for (std::size_t k = 0; k < data::kNumColors; ++k)
      if (t == color_ids[k]) {
        t = color_ids[a.colors[k]];
        break;
      }
  }

  if (a.yaw != 0.0) {
    // Only left_of/right_of see the yaw; keep it when the referent survives.
    auto clusters = s.scene.clusters;
    const PlanarTransform t = planar(a.mirror, a.yaw);
    for (auto& c : clusters) {
      t.apply(c.center[0], c.center[2]);
      c.color = a.colors[c.color];
    }
    if (data::evaluate_expression(out.tokens, clusters, vocab) != std::vector<std::size_t>{s.target})
      out.applied.yaw = 0.0;
  }

  Matrix& in = out.plan.input;
  if (out.applied.mirror || out.applied.yaw != 0.0) {
    const PlanarTransform t = planar(out.applied.mirror, out.applied.yaw);
    for (auto& sp : out.plan.scales) {
      t.apply_rows(sp.positions, 0, 2);
      t.apply_rows(sp.relative_positions, 0, 2);
    }
    // Centered xyz, then the normal after the three color channels.
    t.apply_rows(in, 0, 2);
    t.apply_rows(in, 6, 8);
  }
  std::size_t row = 0;
  for (const data::Cluster& c : s.scene.clusters) {
    const auto from = data::color_rgb(c.color), to = data::color_rgb(a.colors[c.color]);
    if (from == to) {
      row += c.points;
      continue;
    }
    for (std::size_t k = 0; k < c.points; ++k, ++row)
      for (std::size_t i = 0; i < 3; ++i)
        in(row, 3 + i) = std::clamp(in(row, 3 + i) - from[i] + to[i], 0.0, 1.0);
  }
  return out;
}

double sample_loss(const model::Model& model, const Prepared& p,
                   const losses::LossWeights& weights, NoiseSource& noise,
                   std::vector<Matrix>* grads, SampleTerms* terms) {
  return run_loss(model, p.plan, p.sample->tokens, p.target, weights, noise, grads, terms);
}

double sample_loss(const model::Model& model, const AugmentedInput& input,
                   std::span<const double> target, const losses::LossWeights& weights,
                   NoiseSource& noise, std::vector<Matrix>* grads, SampleTerms* terms) {
  return run_loss(model, input.plan, input.tokens, target, weights, noise, grads, terms);
}

TrainResult train(model::Model& model, const std::vector<Prepared>& data,
                  const TrainConfig& cfg, const losses::LossWeights& weights,
                  const Progress& progress) {
  cfg.validate();
  weights.validate();
  require(!data.empty(), "train: dataset is empty", ErrorKind::kData);
  Rng order_rng(cfg.seed);
  Rng noise_rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  NoiseSource noise(&noise_rng, NoiseSource::Mode::kLive);
  Rng augment_rng(cfg.seed ^ 0xbb67ae8584caa73bULL);
  AdamW opt(model.store, cfg);

  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  TrainResult result;
  std::vector<Matrix> grads, sum;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    sum.clear();
    CurvePoint point;
    point.step = step;
    point.lr = learning_rate(cfg, step);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      SampleTerms terms;
      const double loss =
          cfg.augment
              ? sample_loss(model, apply_augmentation(data[idx], draw_augmentation(augment_rng)),
                            data[idx].target, weights, noise, &grads, &terms)
              : sample_loss(model, data[idx], weights, noise, &grads, &terms);
      require(std::isfinite(loss),
              "train: non-finite loss at step " + std::to_string(step) + " on sample " +
                  std::to_string(idx),
              ErrorKind::kNumeric);
      point.loss += loss;
      point.match += terms.match;
      point.contrastive += terms.contrastive;
      if (sum.empty()) {
        sum = std::move(grads);
      } else {
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += grads[i];
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch);
    point.loss *= inv;
    point.match *= inv;
    point.contrastive *= inv;
    double norm2 = 0.0;
    for (Matrix& g : sum) {
      g *= inv;
      for (double v : g.values()) norm2 += v * v;
    }
    point.grad_norm = std::sqrt(norm2);
    require(std::isfinite(point.grad_norm),
            "train: non-finite gradient at step " + std::to_string(step),
            ErrorKind::kNumeric);
    if (cfg.clip > 0 && point.grad_norm > cfg.clip)
      for (Matrix& g : sum) g *= cfg.clip / point.grad_norm;
    opt.step(model.store, sum, point.lr);
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      result.curve.push_back(point);
      if (progress) progress(point);
    }
  }
  return result;
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  require(pred.size() == gt.size(), "iou: mask length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

SplitMetrics split_metrics(const std::vector<double>& ious) {
  SplitMetrics m;
  m.count = ious.size();
  if (ious.empty()) return m;
  std::size_t hit25 = 0, hit50 = 0;
  for (double v : ious) {
    m.miou += v;
    hit25 += v > 0.25;
    hit50 += v > 0.5;
  }
  const double n = static_cast<double>(ious.size());
  m.miou /= n;
  m.acc25 = static_cast<double>(hit25) / n;
  m.acc50 = static_cast<double>(hit50) / n;
  return m;
}

}  // namespace

EvalReport summarize(std::span<const double> ious,
                     std::span<const std::uint8_t> unique) {
  require(ious.size() == unique.size(), "summarize: one flag per sample required");
  EvalReport r;
  r.ious.assign(ious.begin(), ious.end());
  std::vector<double> u, m;
  for (std::size_t i = 0; i < ious.size(); ++i) (unique[i] ? u : m).push_back(ious[i]);
  r.overall = split_metrics(r.ious);
  r.unique = split_metrics(u);
  r.multiple = split_metrics(m);
  return r;
}

Inference infer(const model::Model& model, const Prepared& p) {
  Graph g(model.store);
  NoiseSource quiet = NoiseSource::zero();
  const model::Forward f =
      model::forward(g, model, p.plan, p.sample->tokens, quiet, model::Mode::kEval);
  Inference out;
  out.selected = f.prediction.selected;
  out.scores = f.prediction.scores;
  out.mask_logits = f.prediction.mask_logits.value();
  out.binding = f.binding.assignment;
  out.primitive_response =
      matmul_nt(f.decoded.value(), f.encoded.fused[0].features.value());
  const auto row = out.mask_logits.row(out.selected);
  out.mask.resize(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out.mask[i] = row[i] > 0.0 ? 1 : 0;
  return out;
}

EvalReport evaluate(const model::Model& model, const std::vector<Prepared>& data) {
  std::vector<double> ious;
  std::vector<std::uint8_t> unique;
  for (const Prepared& p : data) {
    ious.push_back(iou(infer(model, p).mask, p.sample->gt_mask));
    unique.push_back(p.sample->is_unique ? 1 : 0);
  }
  return summarize(ious, unique);
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  require(f.good(), "cannot open " + path, ErrorKind::kData);
  f << std::setprecision(17) << "step,lr,loss,match,contrastive,grad_norm\n";
  for (const CurvePoint& c : curve)
    f << c.step << ',' << c.lr << ',' << c.loss << ',' << c.match << ','
      << c.contrastive << ',' << c.grad_norm << '\n';
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path);
  require(f.good(), "cannot open " + path, ErrorKind::kData);
  f << std::setprecision(17) << "split,count,miou,acc25,acc50\n";
  const std::pair<const char*, const SplitMetrics*> rows[] = {
      {"overall", &report.overall}, {"unique", &report.unique},
      {"multiple", &report.multiple}};
  for (const auto& [name, m] : rows)
    f << name << ',' << m->count << ',' << m->miou << ',' << m->acc25 << ','
      << m->acc50 << '\n';
}

namespace {

constexpr char kCkptMagic[8] = {'R', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string b) : b_(std::move(b)) {}
  std::uint64_t uint(std::size_t n) {
    require(pos_ + n <= b_.size(), "checkpoint: truncated file", ErrorKind::kData);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::string bytes(std::size_t n) {
    require(pos_ + n <= b_.size(), "checkpoint: truncated file", ErrorKind::kData);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string b_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const model::Model& model,
                     const std::string& config_text) {
  std::string out(kCkptMagic, sizeof kCkptMagic);
  put_u32(out, kCkptVersion);
  put_u64(out, config_text.size());
  out += config_text;
  put_u32(out, static_cast<std::uint32_t>(model.store.size()));
  for (const Param& p : model.store) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (double v : p.value.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_checkpoint: cannot open " + path, ErrorKind::kData);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_checkpoint: cannot open " + path, ErrorKind::kData);
  ByteReader r(std::string(std::istreambuf_iterator<char>(f), {}));
  require(r.bytes(sizeof kCkptMagic) == std::string(kCkptMagic, sizeof kCkptMagic),
          "read_checkpoint: not a checkpoint: " + path, ErrorKind::kData);
  require(r.uint(4) == kCkptVersion, "read_checkpoint: unsupported version",
          ErrorKind::kData);
  Checkpoint c;
  c.config_text = r.bytes(r.uint(8));
  const auto count = r.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.uint(4));
    const auto rows = r.uint(4), cols = r.uint(4);
    Matrix m(rows, cols);
    for (double& v : m.storage()) {
      const std::uint64_t bits = r.uint(8);
      std::memcpy(&v, &bits, sizeof v);
    }
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  require(r.done(), "read_checkpoint: trailing bytes", ErrorKind::kData);
  return c;
}

void load_parameters(model::Model& model, const Checkpoint& ckpt) {
  require(ckpt.tensors.size() == model.store.size(),
          "checkpoint: tensor count does not match the model", ErrorKind::kData);
  for (const auto& [name, value] : ckpt.tensors) {
    const auto id = model.store.find(name);
    require(id.has_value(), "checkpoint: unknown tensor " + name, ErrorKind::kData);
    Param& p = model.store[*id];
    require(p.value.same_shape(value), "checkpoint: shape mismatch for " + name,
            ErrorKind::kData);
    p.value = value;
  }
}

}  // namespace refseg::train
