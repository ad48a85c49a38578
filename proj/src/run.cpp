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

#include "refseg/run.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "refseg/error.hpp"

namespace refseg::run {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorKind::kConfig, "config: invalid value '" + value + "' for " + key);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    bad_value(key, s);
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, s);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  bad_value(key, s);
}

// `ref` maps a config to the member a key is bound to.
template <typename Get>
Field real(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <typename Get>
Field count(std::string key, Get ref) {
  return {key,
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            ref(c) = static_cast<T>(parse_uint(key, v));
          }};
}

template <typename Get>
Field flag(std::string key, Get ref) {
  return {key,
          [ref](const RunConfig& c) {
            return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false");
          },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

template <typename Get>
Field path(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

#define REF(expr) [](RunConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(count("seed", REF(seed)));
    f.push_back(path("data.train", REF(train_data)));
    f.push_back(path("data.val", REF(val_data)));

    f.push_back(count("model.dim", REF(model.dim)));
    f.push_back(flag("text.positional", REF(model.text.positional)));
    f.push_back({"text.pooling",
                 [](const RunConfig& c) {
                   return std::string(c.model.text.pooling == text::Pooling::kMean ? "mean"
                                                                                   : "max");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "mean")
                     c.model.text.pooling = text::Pooling::kMean;
                   else if (v == "max")
                     c.model.text.pooling = text::Pooling::kMax;
                   else
                     bad_value("text.pooling", v);
                 }});
    f.push_back(count("encoder.groups", REF(model.encoder.groups)));
    f.push_back(count("encoder.group_neighbors", REF(model.encoder.group_neighbors)));
    f.push_back(count("encoder.sa_neighbors", REF(model.encoder.sa_neighbors)));
    f.push_back({"encoder.fusion",
                 [](const RunConfig& c) {
                   return encoder::fusion_mode_name(c.model.encoder.fusion_mode);
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.model.encoder.fusion_mode = encoder::parse_fusion_mode(v);
                 }});
    f.push_back({"encoder.reduction",
                 [](const RunConfig& c) {
                   return std::string(c.model.encoder.reduction == encoder::GroupReduction::kSum
                                          ? "sum"
                                          : "mean");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "sum")
                     c.model.encoder.reduction = encoder::GroupReduction::kSum;
                   else if (v == "mean")
                     c.model.encoder.reduction = encoder::GroupReduction::kMean;
                   else
                     bad_value("encoder.reduction", v);
                 }});
    f.push_back({"encoder.grouping",
                 [](const RunConfig& c) {
                   return std::string(c.model.encoder.grouping_space ==
                                              encoder::GroupingSpace::kCoordinate
                                          ? "coordinate"
                                          : "feature");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "coordinate")
                     c.model.encoder.grouping_space = encoder::GroupingSpace::kCoordinate;
                   else if (v == "feature")
                     c.model.encoder.grouping_space = encoder::GroupingSpace::kFeature;
                   else
                     bad_value("encoder.grouping", v);
                 }});

    f.push_back(count("lpc.primitives", REF(model.lpc.primitives)));
    f.push_back({"lpc.query",
                 [](const RunConfig& c) { return lpc::query_mode_name(c.model.lpc.query); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.lpc.query = lpc::parse_query_mode(v);
                 }});
    f.push_back(flag("lpc.hard", REF(model.lpc.hard)));
    f.push_back(real("lpc.temperature", REF(model.lpc.temperature)));
    f.push_back(real("lpc.initial_sigma", REF(model.lpc.initial_sigma)));

    f.push_back(count("decoder.repeats", REF(model.decoder.repeats)));
    f.push_back(count("decoder.heads", REF(model.decoder.heads)));
    f.push_back(count("decoder.queries", REF(model.decoder.queries)));
    f.push_back(count("decoder.ffn_hidden", REF(model.decoder.ffn_hidden)));
    f.push_back({"decoder.order",
                 [](const RunConfig& c) {
                   return decoder::sub_block_order_name(c.model.decoder.order);
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.model.decoder.order = decoder::parse_sub_block_order(v);
                 }});

    f.push_back(flag("toggle.gegwa", REF(model.toggles.gegwa)));
    f.push_back(flag("toggle.lpc", REF(model.toggles.lpc)));
    f.push_back(flag("toggle.ocm", REF(model.toggles.ocm)));
    f.push_back(flag("toggle.background_token", REF(model.toggles.background_token)));
    f.push_back(flag("toggle.gaussian_init", REF(model.toggles.gaussian_init)));
    f.push_back(flag("toggle.gumbel", REF(model.toggles.gumbel)));

    f.push_back(real("loss.cls", REF(loss.cls)));
    f.push_back(real("loss.bce", REF(loss.bce)));
    f.push_back(real("loss.dice", REF(loss.dice)));
    f.push_back(real("loss.con", REF(loss.con)));
    f.push_back(real("loss.tau", REF(loss.tau)));
    f.push_back(real("loss.no_object", REF(loss.no_object)));
    f.push_back(real("loss.dice_smooth", REF(loss.dice_smooth)));

    f.push_back(real("train.lr", REF(train.lr)));
    f.push_back(flag("train.cosine", REF(train.cosine)));
    f.push_back(count("train.warmup", REF(train.warmup)));
    f.push_back(count("train.steps", REF(train.steps)));
    f.push_back(count("train.batch", REF(train.batch)));
    f.push_back(count("train.seed", REF(train.seed)));
    f.push_back(real("train.beta1", REF(train.beta1)));
    f.push_back(real("train.beta2", REF(train.beta2)));
    f.push_back(real("train.eps", REF(train.eps)));
    f.push_back(real("train.weight_decay", REF(train.weight_decay)));
    f.push_back(real("train.clip", REF(train.clip)));
    f.push_back(count("train.log_every", REF(train.log_every)));
    f.push_back(flag("train.augment", REF(train.augment)));

    f.push_back(count("grammar.min_clusters", REF(grammar.min_clusters)));
    f.push_back(count("grammar.max_clusters", REF(grammar.max_clusters)));
    f.push_back(count("grammar.min_points", REF(grammar.min_points)));
    f.push_back(count("grammar.max_points", REF(grammar.max_points)));
    f.push_back(count("grammar.cluster_min_points", REF(grammar.cluster_min_points)));
    f.push_back(count("grammar.cluster_max_points", REF(grammar.cluster_max_points)));
    f.push_back(count("grammar.floor_min_points", REF(grammar.floor_min_points)));
    f.push_back(real("grammar.relation_prob", REF(grammar.relation_prob)));
    f.push_back(real("grammar.extra_attribute_prob", REF(grammar.extra_attribute_prob)));
    f.push_back(real("grammar.elevated_prob", REF(grammar.elevated_prob)));
    f.push_back(count("grammar.max_retries", REF(grammar.max_retries)));
    return f;
  }();
  return table;
}

#undef REF

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  fail(ErrorKind::kConfig, "config: unknown key '" + key + "'");
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two values.
double spread_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

RunConfig::RunConfig() {
  model.vocab_size = data::standard_vocabulary().size();
  model.encoder.input_features = data::kFeatureDim;
  // 256-point scenes have 16 points at the coarsest scale.
  model.encoder.groups = 16;
  model.encoder.group_neighbors = 8;
  model.lpc.primitives = 16;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  grammar.validate();
  require(model.vocab_size == data::standard_vocabulary().size(),
          "config: vocabulary size does not match the grammar", ErrorKind::kConfig);
  const std::size_t coarsest = encoder::EncoderConfig::scale_points(
      grammar.min_points, encoder::kNumScales - 1);
  require(grammar.min_points == 0 || model.encoder.groups <= coarsest,
          "config: encoder.groups exceeds the coarsest scale of the smallest scene",
          ErrorKind::kConfig);
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return dump_config(a) == dump_config(b);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + " is not 'key = value'",
            ErrorKind::kConfig);
    assign(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "config: cannot open " + path, ErrorKind::kConfig);
  return parse_config(std::string(std::istreambuf_iterator<char>(f), {}));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    require(eq != std::string::npos, "config: override '" + a + "' is not key=value",
            ErrorKind::kConfig);
    assign(cfg, trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
  cfg.validate();
}

RunConfig small_config() {
  RunConfig c;
  c.model.dim = 8;
  c.model.lpc.primitives = 4;
  c.model.decoder.queries = 2;
  c.model.decoder.repeats = 1;
  c.model.decoder.heads = 2;
  c.model.decoder.ffn_hidden = 16;
  c.model.encoder.groups = 4;
  c.model.encoder.group_neighbors = 4;
  c.model.encoder.sa_neighbors = 4;
  c.grammar.min_clusters = 2;
  c.grammar.max_clusters = 2;
  c.grammar.min_points = 64;
  c.grammar.max_points = 64;
  c.grammar.cluster_min_points = 16;
  c.grammar.cluster_max_points = 16;
  c.grammar.floor_min_points = 32;
  return c;
}

model::Model build_model(const RunConfig& cfg) {
  cfg.validate();
  return model::Model::create(cfg.model, cfg.seed);
}

std::pair<model::Model, RunConfig> load_model(const std::string& path) {
  const train::Checkpoint ckpt = train::read_checkpoint(path);
  RunConfig cfg = parse_config(ckpt.config_text);
  model::Model m = build_model(cfg);
  train::load_parameters(m, ckpt);
  return {std::move(m), std::move(cfg)};
}

void save_model(const std::string& path, const model::Model& model,
                const RunConfig& cfg) {
  train::save_checkpoint(path, model, dump_config(cfg));
}

namespace {
// Roundoff of one central difference observed on the pipeline loss stays
// below eps * |L| / h; a factor 4 leaves headroom.
constexpr double kFdResolutionFactor = 4.0;
}  // namespace

std::vector<ModuleCheck> grad_check_suite(const RunConfig& base, double tol,
                                          std::uint64_t scene_seed) {
  GradCheckOptions opt;
  opt.resolution_factor = kFdResolutionFactor;
  RunConfig cfg = base;
  cfg.model.lpc.hard = false;  // straight-through gradients are not derivatives
  model::Model m = build_model(cfg);
  const std::vector<data::Sample> samples{data::generate(scene_seed, cfg.grammar)};
  const data::Sample& sample = samples.front();
  const auto prepared = train::prepare(samples, m.config.encoder);
  const train::Prepared& p = prepared.front();

  Rng noise_rng(cfg.train.seed);
  NoiseSource noise(&noise_rng, NoiseSource::Mode::kRecord);
  const LossFunction pipeline = [&](const ParamStore& store, std::vector<Matrix>* grads) {
    if (noise.mode() == NoiseSource::Mode::kReplay) noise.start_replay();
    Graph g(store);
    const model::Forward f =
        model::forward(g, m, p.plan, sample.tokens, noise, model::Mode::kTrain);
    const losses::LossTerms t =
        losses::total_loss(f.prediction, f.text.sentence, p.target, cfg.loss);
    if (noise.mode() == NoiseSource::Mode::kRecord) noise.start_replay();
    if (grads) {
      g.backward(t.total);
      *grads = g.gradients();
    }
    return t.total.item();
  };

  std::vector<ModuleCheck> out;
  const char* groups[] = {"text", "encoder", "lpc", "decoder", "ocm", "query_norm", "head"};
  std::vector<bool> trainable;
  for (const Param& q : m.store) trainable.push_back(q.trainable);
  for (const char* group : groups) {
    const std::string prefix = std::string(group) + ".";
    bool any = false;
    for (ParamId id = 0; id < m.store.size(); ++id) {
      m.store[id].trainable = trainable[id] && m.store[id].name.rfind(prefix, 0) == 0;
      any = any || m.store[id].trainable;
    }
    if (!any) continue;
    out.push_back({group, grad_check(pipeline, m.store, tol, opt)});
  }
  for (ParamId id = 0; id < m.store.size(); ++id) m.store[id].trainable = trainable[id];

  // Loss terms against free tensors standing in for the prediction.
  ParamStore free;
  Rng rng(scene_seed);
  const std::size_t nq = cfg.model.decoder.queries, d = cfg.model.dim;
  const ParamId mask = free.add("mask_logits", rng.normal_matrix(nq, sample.cloud.size()));
  const ParamId cls = free.add("class_logits", rng.normal_matrix(nq, 2));
  const ParamId obj = free.add("objects", rng.normal_matrix(nq, d));
  const ParamId sent = free.add("sentence", rng.normal_matrix(1, d));
  const LossFunction loss_only = [&](const ParamStore& store, std::vector<Matrix>* grads) {
    Graph g(store);
    decoder::Prediction pred;
    pred.mask_logits = g.param(mask);
    pred.class_logits = g.param(cls);
    pred.object_embeddings = g.param(obj);
    pred.scores.assign(nq, 0.0);
    const losses::LossTerms t = losses::total_loss(pred, g.param(sent), p.target, cfg.loss);
    if (grads) {
      g.backward(t.total);
      *grads = g.gradients();
    }
    return t.total.item();
  };
  out.push_back({"losses", grad_check(loss_only, free, tol, opt)});
  return out;
}

std::vector<AblationVariant> table_variants() {
  return {
      {"full", {}},
      {"-gegwa", {"toggle.gegwa=false"}},
      {"-lpc", {"toggle.lpc=false"}},
      {"-ocm", {"toggle.ocm=false"}},
      {"baseline", {"toggle.gegwa=false", "toggle.lpc=false", "toggle.ocm=false"}},
  };
}

std::vector<AblationVariant> parse_variants(const std::string& spec) {
  std::vector<AblationVariant> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    AblationVariant v;
    const auto colon = item.find(':');
    v.name = trim(item.substr(0, colon));
    require(!v.name.empty(), "ablate: variant without a name", ErrorKind::kConfig);
    if (colon != std::string::npos) {
      std::istringstream kv(item.substr(colon + 1));
      std::string a;
      while (std::getline(kv, a, ','))
        if (!trim(a).empty()) v.overrides.push_back(trim(a));
    }
    out.push_back(std::move(v));
  }
  require(!out.empty(), "ablate: no variants given", ErrorKind::kConfig);
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<data::Sample>& train_set,
                                      const std::vector<data::Sample>& val_set,
                                      const train::Progress& progress) {
  require(!seeds.empty(), "ablate: at least one seed required", ErrorKind::kConfig);
  require(!train_set.empty() && !val_set.empty(), "ablate: empty dataset",
          ErrorKind::kData);
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : variants) {
    RunConfig cfg = base;
    apply_overrides(cfg, v.overrides);
    const auto enc = cfg.model.resolved().encoder;
    const auto tr = train::prepare(train_set, enc);
    const auto va = train::prepare(val_set, enc);
    AblationRow row;
    row.name = v.name;
    for (std::uint64_t s : seeds) {
      cfg.seed = s;
      cfg.train.seed = s;
      model::Model m = build_model(cfg);
      train::train(m, tr, cfg.train, cfg.loss, progress);
      const train::EvalReport r = train::evaluate(m, va);
      row.miou.push_back(r.overall.miou);
      row.acc25.push_back(r.overall.acc25);
      row.acc50.push_back(r.overall.acc50);
    }
    row.mean_miou = mean_of(row.miou);
    row.std_miou = spread_of(row.miou);
    row.mean_acc50 = mean_of(row.acc50);
    row.std_acc50 = spread_of(row.acc50);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,seeds,miou_mean,miou_std,acc50_mean,acc50_std,miou_per_seed\n";
  for (const AblationRow& r : rows) {
    os << r.name << ',' << r.miou.size() << ',' << format_double(r.mean_miou) << ','
       << format_double(r.std_miou) << ',' << format_double(r.mean_acc50) << ','
       << format_double(r.std_acc50) << ',';
    for (std::size_t i = 0; i < r.miou.size(); ++i)
      os << (i ? ";" : "") << format_double(r.miou[i]);
    os << '\n';
  }
  return os.str();
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| variant | seeds | mIoU | Acc@0.5 |\n|---|---|---|---|\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const AblationRow& r : rows)
    os << "| " << r.name << " | " << r.miou.size() << " | " << 100 * r.mean_miou
       << " ± " << 100 * r.std_miou << " | " << 100 * r.mean_acc50 << " ± "
       << 100 * r.std_acc50 << " |\n";
  return os.str();
}

}  // namespace refseg::run
