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

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ct4rec/config.hpp"
#include "ct4rec/corpus.hpp"
#include "ct4rec/evaluator.hpp"
#include "ct4rec/gradcheck.hpp"
#include "ct4rec/trainer.hpp"

namespace ct4rec {

inline constexpr const char* kSequencesFile = "sequences.txt";
inline constexpr const char* kDatasetManifestFile = "dataset_manifest.json";
inline constexpr const char* kSweepHeader =
    "alpha,beta,dropout,tau,hr1,hr5,hr10,hr20,ndcg5,ndcg10,ndcg20,epochs,seconds";

/// `dataset.prepared_dir`, or `<raw dir>/<raw stem>_prepared` when unset.
std::filesystem::path prepared_dir(const ExperimentConfig& config);

struct PreparedData {
  std::vector<UserSequence> sequences;
  DatasetManifest manifest;
};

/// Reads the remapped sequences written by cmd_prepare. Ids are used as-is.
PreparedData read_prepared(const std::filesystem::path& dir);

/// Ingests the raw file, remaps ids, writes sequences and the manifest.
DatasetManifest cmd_prepare(const ExperimentConfig& config);

struct TrainOutcome {
  EvalReport report;  // test split, best parameters
  TrainLog log;
  int best_epoch = -1;
  std::filesystem::path run_dir;
};

/// Trains on the prepared data and writes the run directory: config.json,
/// metrics.jsonl, epochs.jsonl, checkpoint/ (best), final/, report.json and
/// report.txt.
TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream* progress = nullptr);

/// Evaluates a checkpoint on the test split. `negatives` overrides the
/// protocol's negative count (e.g. 100 or 500).
EvalReport cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                    std::optional<int> negatives = std::nullopt);

GradcheckReport cmd_gradcheck(const GradcheckOptions& options);

struct SweepPoint {
  double alpha = 0.0;
  double beta = 0.0;
  double dropout = 0.0;
  double tau = 0.0;
};

struct SweepRow {
  SweepPoint point;
  std::optional<EvalReport> report;  // empty when the point failed
  std::string error;
  int epochs = 0;
  double seconds = 0.0;
};

std::vector<SweepPoint> expand_grid(const ExperimentConfig& config);

/// Runs every grid point into `<output_dir>/point_<i>` and writes
/// `<output_dir>/sweep.csv`. Failed points are recorded and skipped.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, bool parallel = false,
                                std::ostream* progress = nullptr);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ct4rec
