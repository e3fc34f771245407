// Copyright 2026 The ct4rec Authors. All Rights Reserved.
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

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ct4rec/config.hpp"
#include "ct4rec/error.hpp"
#include "ct4rec/experiment.hpp"

namespace {

using ct4rec::ExperimentConfig;

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& extras) {
  ExperimentConfig base = path.empty() ? ExperimentConfig{} : ct4rec::load_experiment(path);
  nlohmann::json doc = ct4rec::to_json(base);
  ct4rec::apply_overrides(doc, ct4rec::parse_override_tokens(extras));
  ExperimentConfig config = ct4rec::experiment_from_json(doc);
  config.validate();
  return config;
}

void add_config_option(CLI::App* cmd, std::string& path) {
  cmd->add_option("-c,--config", path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->allow_extras();
  cmd->footer("Any config value can be overridden with --section.key VALUE, e.g. --weights.alpha 0.");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency-regularised sequential recommendation"};
  app.require_subcommand(1);

  std::string config_path;
  bool quiet = false;

  auto* prepare = app.add_subcommand("prepare", "Ingest a raw interaction file and write remapped sequences");
  add_config_option(prepare, config_path);

  auto* train = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  add_config_option(train, config_path);
  train->add_flag("-q,--quiet", quiet, "Suppress per-epoch progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_config_option(eval, config_path);
  std::string checkpoint;
  std::optional<int> negatives;
  std::string eval_out;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: <output_dir>/checkpoint)");
  eval->add_option("--negatives", negatives, "Sampled negatives per user; <= 0 ranks the full catalog");
  eval->add_option("-o,--out", eval_out, "Also write the report JSON here");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  ct4rec::GradcheckOptions gc;
  std::string corrupt;
  bool gc_json = false;
  gradcheck->add_option("--component", gc.components, "Restrict to these components");
  gradcheck->add_option("--tolerance", gc.tolerance, "Relative error threshold");
  gradcheck->add_option("--seed", gc.seed, "Fixture seed");
  gradcheck->add_option("--corrupt", corrupt, "Deliberately perturb one component's gradient");
  gradcheck->add_flag("--json", gc_json, "Print the report as JSON");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every point of the configured grid");
  add_config_option(sweep, config_path);
  bool parallel = false;
  sweep->add_flag("--parallel", parallel, "Run grid points concurrently");
  sweep->add_flag("-q,--quiet", quiet, "Suppress per-point progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit 0; every usage error maps to the generic failure code.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      ExperimentConfig config = resolve_config(config_path, prepare->remaining());
      ct4rec::DatasetManifest manifest = ct4rec::cmd_prepare(config);
      std::cout << ct4rec::to_json(manifest).dump(2) << '\n';
    } else if (*train) {
      ExperimentConfig config = resolve_config(config_path, train->remaining());
      ct4rec::TrainOutcome outcome = ct4rec::cmd_train(config, quiet ? nullptr : &std::cerr);
      std::cout << outcome.report.to_json().dump(2) << '\n';
    } else if (*eval) {
      ExperimentConfig config = resolve_config(config_path, eval->remaining());
      std::filesystem::path dir = checkpoint.empty() ? std::filesystem::path(config.output_dir) / "checkpoint"
                                                     : std::filesystem::path(checkpoint);
      ct4rec::EvalReport report = ct4rec::cmd_eval(config, dir, negatives);
      std::string text = report.to_json().dump(2) + "\n";
      std::cout << text;
      if (!eval_out.empty()) {
        std::ofstream out(eval_out, std::ios::trunc);
        if (!out) throw ct4rec::Error("cannot write " + eval_out);
        out << text;
      }
    } else if (*gradcheck) {
      if (!corrupt.empty()) gc.corrupt = corrupt;
      ct4rec::GradcheckReport report = ct4rec::cmd_gradcheck(gc);
      std::cout << (gc_json ? report.to_json().dump(2) + "\n" : report.to_text());
      return report.passed ? 0 : 1;
    } else if (*sweep) {
      ExperimentConfig config = resolve_config(config_path, sweep->remaining());
      auto rows = ct4rec::cmd_sweep(config, parallel, quiet ? nullptr : &std::cerr);
      std::cout << ct4rec::sweep_csv(rows);
      for (const auto& row : rows) {
        if (!row.report) return 2;
      }
    }
  } catch (const ct4rec::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
