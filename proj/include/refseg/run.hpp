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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refseg/data.hpp"
#include "refseg/losses.hpp"
#include "refseg/model.hpp"
#include "refseg/numeric/grad_check.hpp"
#include "refseg/train.hpp"

namespace refseg::run {

/// Every knob of a run. Text form: one `key = value` per line, `#` starts
/// a comment, blank lines are ignored, keys not listed by dump() are
/// rejected. Booleans are true/false.
struct RunConfig {
  std::uint64_t seed = 1;  // model initialization
  model::ModelConfig model;
  losses::LossWeights loss;
  train::TrainConfig train;
  data::GrammarConfig grammar;
  std::string train_data;
  std::string val_data;

  RunConfig();
  void validate() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

RunConfig parse_config(const std::string& text);
std::string dump_config(const RunConfig& cfg);
RunConfig load_config(const std::string& path);
/// Applies `key=value` assignments on top of a config.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

/// Grad-check sized pipeline: N = 64, D = 8, N_o = 4, N_c = 2, L = 1.
RunConfig small_config();

/// Fresh model for a config (vocabulary size from the standard grammar).
model::Model build_model(const RunConfig& cfg);
/// Model and configuration stored in a checkpoint.
std::pair<model::Model, RunConfig> load_model(const std::string& path);
void save_model(const std::string& path, const model::Model& model,
                const RunConfig& cfg);

struct ModuleCheck {
  std::string module;
  GradCheckReport report;
};

/// Central finite-difference checks of the full objective with frozen
/// noise and soft binding, one report per parameter group (text, encoder,
/// lpc, decoder, ocm, head) plus the loss terms against free prediction
/// tensors.
std::vector<ModuleCheck> grad_check_suite(const RunConfig& cfg, double tol,
                                          std::uint64_t scene_seed = 7);

struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;  // key=value
};

/// Full model, each single component removed, and everything removed.
std::vector<AblationVariant> table_variants();
/// Parses `name:key=value,key=value;name2:...`.
std::vector<AblationVariant> parse_variants(const std::string& spec);

struct AblationRow {
  std::string name;
  std::vector<double> miou;   // per seed
  std::vector<double> acc25;
  std::vector<double> acc50;
  double mean_miou = 0, std_miou = 0;
  double mean_acc50 = 0, std_acc50 = 0;
};

/// Trains every variant under each seed (model and training seed) with the
/// same data and budget; reports validation metrics.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<data::Sample>& train_set,
                                      const std::vector<data::Sample>& val_set,
                                      const train::Progress& progress = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_markdown(const std::vector<AblationRow>& rows);

}  // namespace refseg::run
