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

#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct4rec/corpus.hpp"
#include "ct4rec/encoder.hpp"
#include "ct4rec/evaluator.hpp"
#include "ct4rec/objectives.hpp"
#include "ct4rec/trainer.hpp"

namespace ct4rec {

struct DatasetConfig {
  std::string path;          // raw interaction file read by `prepare`
  InputFormat format = InputFormat::kTsvTriples;
  int min_interactions = 5;
  std::string prepared_dir;  // where `prepare` writes and `train` reads; derived from path if empty
};

/// Grid for `sweep`. An empty axis keeps the base config value.
struct SweepGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> dropout;
  std::vector<double> tau;

  bool empty() const { return alpha.empty() && beta.empty() && dropout.empty() && tau.empty(); }
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig train;      // carries encoder and weights
  EvalProtocol protocol;  // protocol.seed is derived from `seed`
  SweepGrid sweep;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 42;

  void validate() const;
  /// Copies `seed` into the trainer and derives the test-protocol seed.
  void sync_seeds();
};

nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const TrainConfig& c);  // without encoder / weights
nlohmann::json to_json(const ExperimentConfig& c);

/// Parses a full config. Missing keys keep their defaults; unknown keys are
/// rejected with ConfigError naming the key.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

/// Applies `--a.b value` style overrides to a config document. Values are
/// parsed as JSON when possible and kept as strings otherwise. `aux` is
/// shorthand for `weights.aux_mode`.
void apply_overrides(nlohmann::json& doc, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Splits raw argv-style tokens (`--key value` or `--key=value`) into pairs.
std::vector<std::pair<std::string, std::string>> parse_override_tokens(const std::vector<std::string>& tokens);

}  // namespace ct4rec
