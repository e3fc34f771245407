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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct4rec/corpus.hpp"
#include "ct4rec/encoder.hpp"
#include "ct4rec/evaluator.hpp"
#include "ct4rec/objectives.hpp"
#include "ct4rec/optimizer.hpp"

namespace ct4rec {

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 128;
  int max_epochs = 200;
  int early_stop_patience = 20;  // <= 0 disables early stopping
  AdamConfig adam;
  std::uint64_t seed = 42;
  int eval_every = 1;
  int n_neg = 100;            // sampled negatives per training step
  int valid_negatives = 500;  // validation protocol; clamped to the catalog
  double clip_norm = 0.0;     // 0 disables clipping
  bool force_two_pass = false;
  LossWeights weights;
  EncoderConfig encoder;

  void validate() const;
  /// Whether train_step runs two forward passes per batch.
  bool two_pass() const { return force_two_pass || weights.needs_two_passes(); }
};

/// Leave-one-out test pairs plus a second-to-last validation pair per user.
struct TrainingData {
  int catalog_size = 0;
  std::vector<UserSequence> fit;     // sequences used for gradient steps
  std::vector<TestPair> validation;  // predicts s[-2] from s[:-2]
  std::vector<TestPair> test;        // predicts s[-1] from s[:-1]
  std::size_t excluded_users = 0;

  static TrainingData from_sequences(std::vector<UserSequence> sequences, int catalog_size);
  static TrainingData from_log(const InteractionLog& log);
};

struct TrainState {
  ParameterSet<float> params;
  AdamMoments<float> moments;
  std::int64_t step = 0;
  int epoch = 0;           // epochs completed
  int batch_in_epoch = 0;  // batches of the current epoch already applied
  double best_metric = -1.0;
  int best_epoch = -1;
  int bad_evals = 0;
  std::uint64_t seed = 0;
};

TrainState init_state(const TrainConfig& config, int catalog_size);

/// One optimisation step: forward pass(es), total loss, one Adam update.
/// All randomness is derived from (state.seed, state.step).
LossBreakdown train_step(TrainState& state, const SequenceBatch& batch, const TrainConfig& config);

/// Batches of epoch `epoch` for the given fit sequences.
std::vector<SequenceBatch> epoch_batches(const TrainConfig& config, const TrainingData& data, int epoch);

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double train_seconds = 0.0;
  LossBreakdown mean_loss;
  std::optional<double> valid_ndcg10;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
  double train_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const nlohmann::json&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const TrainState&)> on_best;
};

struct TrainResult {
  TrainState state;
  ParameterSet<float> best_params;
  TrainLog log;
};

/// Runs epochs from state.epoch until max_epochs or early stopping.
/// Validation NDCG@10 selects the best parameters.
TrainResult train(const TrainConfig& config, const TrainingData& data, TrainState state,
                  const TrainHooks& hooks = {});
TrainResult train(const TrainConfig& config, const TrainingData& data, const TrainHooks& hooks = {});

/// Writes manifest.json + tensors.bin (parameters and Adam moments) and
/// trainer_state.json (counters, best metric, seed).
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);
/// Loads and checks tensor shapes against an encoder config and catalog.
TrainState load_checkpoint(const std::filesystem::path& dir, const EncoderConfig& config, int catalog_size);

}  // namespace ct4rec
