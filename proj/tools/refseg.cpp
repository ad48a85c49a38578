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

// refseg: dataset generation, training, evaluation, inference export,
// gradient checks and ablations from the command line.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "refseg/error.hpp"
#include "refseg/run.hpp"

namespace {

using namespace refseg;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kNumeric:
      return 4;
  }
  return 1;
}

std::string_view kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig:
      return "config";
    case ErrorKind::kInvalidArgument:
      return "argument";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kNumeric:
      return "numeric";
  }
  return "unknown";
}

std::uint64_t default_seed() {
  if (const char* s = std::getenv("REFSEG_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    require(end && *end == '\0' && end != s, "REFSEG_SEED is not an unsigned integer",
            ErrorKind::kConfig);
    return v;
  }
  return 1;
}

run::RunConfig config_from(const std::string& path, const std::vector<std::string>& sets) {
  run::RunConfig cfg = path.empty() ? run::RunConfig{} : run::load_config(path);
  run::apply_overrides(cfg, sets);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  require(f.good(), "cannot open " + path, ErrorKind::kData);
  f << text;
}

std::vector<data::Sample> load_required(const std::string& path, const char* what) {
  require(!path.empty(), std::string("no ") + what + " dataset given", ErrorKind::kConfig);
  return data::load_dataset(path);
}

void print_report(const train::EvalReport& r) {
  std::cout << "samples " << r.overall.count << " miou " << r.overall.miou << " acc25 "
            << r.overall.acc25 << " acc50 " << r.overall.acc50 << " unique "
            << r.unique.count << "/" << r.unique.miou << " multiple " << r.multiple.count
            << "/" << r.multiple.miou << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refseg: language-guided 3D point-cloud segmentation toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config_path, data_path, val_path, out_path, ckpt_path, report_path;
  std::vector<std::string> sets;
  std::size_t count = 100, min_clusters = 3, max_clusters = 6, scene_index = 0;
  double tol = 1e-4;
  std::string toggles, seeds_arg = "1,2,3", ply_path;
  bool dump = false, quiet = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", out_path, "dataset file")->required();
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--seed", seed, "base seed (default $REFSEG_SEED or 1)");
  gen->add_option("--min-clusters", min_clusters);
  gen->add_option("--max-clusters", max_clusters);
  gen->add_option("--config", config_path, "config file for the grammar keys");
  gen->add_option("--set", sets, "key=value override");

  auto* trn = app.add_subcommand("train", "train a model");
  trn->add_option("--config", config_path);
  trn->add_option("--data", data_path, "training dataset (overrides data.train)");
  trn->add_option("--val", val_path, "validation dataset (overrides data.val)");
  trn->add_option("--out-checkpoint", ckpt_path);
  trn->add_option("--set", sets, "key=value override");
  trn->add_flag("--dump-config", dump, "print the resolved config and exit");
  trn->add_flag("--quiet", quiet);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--data", data_path)->required();
  ev->add_option("--report", report_path, "EvalReport CSV");

  auto* inf = app.add_subcommand("infer", "predict one scene and export PLY heatmaps");
  inf->add_option("--checkpoint", ckpt_path)->required();
  inf->add_option("--data", data_path, "dataset (default: data.val of the checkpoint)");
  inf->add_option("--scene-index", scene_index);
  inf->add_option("--export-ply", ply_path, "mask PLY; primitive heatmaps get _prim<i>");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suite");
  gc->add_option("--config", config_path, "defaults to the small check configuration");
  gc->add_option("--tol", tol);
  gc->add_option("--set", sets, "key=value override");

  auto* ab = app.add_subcommand("ablate", "train and compare component variants");
  ab->add_option("--config", config_path);
  ab->add_option("--toggles", toggles, "name:key=v,...;name2:... (default: table)");
  ab->add_option("--seeds", seeds_arg, "comma-separated seeds");
  ab->add_option("--data", data_path);
  ab->add_option("--val", val_path);
  ab->add_option("--out", out_path, "prefix for .csv and .md tables");
  ab->add_option("--set", sets, "key=value override");
  ab->add_flag("--quiet", quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (seed == 0) seed = default_seed();
    if (*gen) {
      run::RunConfig cfg = config_from(config_path, sets);
      cfg.grammar.min_clusters = min_clusters;
      cfg.grammar.max_clusters = max_clusters;
      cfg.grammar.validate();
      const auto samples = data::generate_dataset(seed, count, cfg.grammar);
      data::save_dataset(out_path, samples);
      data::standard_vocabulary().save(out_path + ".vocab.tsv");
      std::cout << "wrote " << samples.size() << " samples to " << out_path << "\n";
    } else if (*trn) {
      run::RunConfig cfg = config_from(config_path, sets);
      if (!data_path.empty()) cfg.train_data = data_path;
      if (!val_path.empty()) cfg.val_data = val_path;
      if (dump) {
        std::cout << run::dump_config(cfg);
        return 0;
      }
      require(!ckpt_path.empty(), "train: --out-checkpoint is required", ErrorKind::kConfig);
      const auto train_set = load_required(cfg.train_data, "training");
      model::Model m = run::build_model(cfg);
      const auto prepared = train::prepare(train_set, m.config.encoder);
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = train::train(m, prepared, cfg.train, cfg.loss,
                                       [&](const train::CurvePoint& c) {
                                         if (quiet) return;
                                         std::cout << "step " << c.step << " lr " << c.lr
                                                   << " loss " << c.loss << "\n";
                                       });
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      run::save_model(ckpt_path, m, cfg);
      train::write_curve_csv(ckpt_path + ".curve.csv", result.curve);
      std::cerr << "trained " << cfg.train.steps << " steps in " << secs << " s\n";
      if (!cfg.val_data.empty()) {
        const auto val = data::load_dataset(cfg.val_data);
        const auto report = train::evaluate(m, train::prepare(val, m.config.encoder));
        train::write_report_csv(ckpt_path + ".val.csv", report);
        print_report(report);
      }
    } else if (*ev) {
      auto [m, cfg] = run::load_model(ckpt_path);
      const auto samples = data::load_dataset(data_path);
      const auto report = train::evaluate(m, train::prepare(samples, m.config.encoder));
      if (!report_path.empty()) train::write_report_csv(report_path, report);
      print_report(report);
    } else if (*inf) {
      auto [m, cfg] = run::load_model(ckpt_path);
      const auto samples = load_required(data_path.empty() ? cfg.val_data : data_path,
                                         "inference");
      require(scene_index < samples.size(), "infer: scene index out of range",
              ErrorKind::kData);
      const std::vector<data::Sample> one{samples[scene_index]};
      const auto prepared = train::prepare(one, m.config.encoder);
      const train::Inference r = train::infer(m, prepared.front());
      const data::Sample& s = one.front();
      std::cout << "expression: " << data::standard_vocabulary().decode(s.tokens) << "\n"
                << "selected query " << r.selected << " score " << r.scores[r.selected]
                << " iou " << train::iou(r.mask, s.gt_mask) << "\n";
      if (!ply_path.empty()) {
        std::vector<std::array<double, 3>> colors(s.cloud.size());
        for (std::size_t i = 0; i < colors.size(); ++i)
          colors[i] = r.mask[i] ? std::array<double, 3>{1.0, 0.1, 0.1}
                                : std::array<double, 3>{0.6, 0.6, 0.6};
        data::export_ply(ply_path, s.cloud.positions, colors);
        const std::string stem = ply_path.size() > 4 &&
                                         ply_path.substr(ply_path.size() - 4) == ".ply"
                                     ? ply_path.substr(0, ply_path.size() - 4)
                                     : ply_path;
        const Matrix& resp = r.primitive_response;
        for (std::size_t q = 0; q < resp.rows(); ++q) {
          const auto row = resp.row(q);
          const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
          const double span = std::max(*hi - *lo, 1e-12);
          for (std::size_t i = 0; i < row.size(); ++i)
            colors[i] = data::heat_color((row[i] - *lo) / span);
          data::export_ply(stem + "_prim" + std::to_string(q) + ".ply", s.cloud.positions,
                           colors);
        }
        std::cout << "wrote " << ply_path << " and " << resp.rows() << " heatmaps\n";
      }
    } else if (*gc) {
      run::RunConfig cfg = config_path.empty() ? run::small_config()
                                               : run::load_config(config_path);
      run::apply_overrides(cfg, sets);
      bool ok = true;
      for (const auto& c : run::grad_check_suite(cfg, tol)) {
        std::cout << (c.report.passed ? "PASS " : "FAIL ") << c.module << " checked "
                  << c.report.checked << " below_floor " << c.report.below_floor
                  << " floor " << c.report.floor << " max_rel_error "
                  << c.report.max_rel_error << " max_abs_below_floor "
                  << c.report.max_abs_error_below_floor;
        if (!c.report.worst_param.empty())
          std::cout << " worst " << c.report.worst_param << "[" << c.report.worst_index
                    << "] analytic " << c.report.worst_analytic << " numeric "
                    << c.report.worst_numeric;
        std::cout << "\n";
        for (std::size_t i = 0; i < std::min<std::size_t>(3, c.report.mismatches.size()); ++i) {
          const auto& mm = c.report.mismatches[i];
          std::cout << "  " << mm.param << "[" << mm.index << "] analytic " << mm.analytic
                    << " numeric " << mm.numeric << " rel " << mm.rel_error << "\n";
        }
        ok = ok && c.report.passed;
      }
      if (!ok) fail(ErrorKind::kNumeric, "grad-check: tolerance exceeded");
    } else if (*ab) {
      run::RunConfig cfg = config_from(config_path, sets);
      if (!data_path.empty()) cfg.train_data = data_path;
      if (!val_path.empty()) cfg.val_data = val_path;
      std::vector<std::uint64_t> seeds;
      std::stringstream ss(seeds_arg);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        char* end = nullptr;
        seeds.push_back(std::strtoull(tok.c_str(), &end, 10));
        require(end && *end == '\0' && !tok.empty(), "ablate: bad seed '" + tok + "'",
                ErrorKind::kConfig);
      }
      const auto variants =
          toggles.empty() ? run::table_variants() : run::parse_variants(toggles);
      const auto rows = run::run_ablation(
          cfg, variants, seeds, load_required(cfg.train_data, "training"),
          load_required(cfg.val_data, "validation"), [&](const train::CurvePoint& c) {
            if (!quiet && c.step % 500 == 0)
              std::cerr << "step " << c.step << " loss " << c.loss << "\n";
          });
      const std::string md = run::ablation_markdown(rows);
      std::cout << md;
      if (!out_path.empty()) {
        write_text(out_path + ".csv", run::ablation_csv(rows));
        write_text(out_path + ".md", md);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error kind=" << kind_name(e.kind()) << " message=\"" << e.what() << "\"\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal message=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
