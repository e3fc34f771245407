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

#include "ct4rec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ct4rec/checkpoint.hpp"
#include "ct4rec/error.hpp"
#include "ct4rec/rng.hpp"

namespace ct4rec {

namespace {

constexpr const char* kTrainerStateFile = "trainer_state.json";
const std::vector<std::string> kScalarNames{"step",       "epoch",     "batch_in_epoch", "best_metric",
                                            "best_epoch", "bad_evals", "seed"};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string dump_batch(const SequenceBatch& batch, std::int64_t step, const LossBreakdown& loss) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (basic=" << loss.basic << " rd=" << loss.rd
     << " dr=" << loss.dr << " aux=" << loss.aux << " two_pos=" << loss.two_pos
     << " contrastive=" << loss.contrastive << ")\n";
  for (int b = 0; b < batch.batch_size; ++b) {
    os << "user " << batch.users[b] << ":";
    for (int t = 0; t < batch.max_len; ++t) {
      if (batch.valid(b, t)) os << ' ' << batch.input(b, t) << "->" << batch.target(b, t);
    }
    os << '\n';
  }
  return os.str();
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
  acc.basic += x.basic;
  acc.rd += x.rd;
  acc.dr += x.dr;
  acc.aux += x.aux;
  acc.two_pos += x.two_pos;
  acc.contrastive += x.contrastive;
  acc.total += x.total;
}

LossBreakdown scaled(LossBreakdown x, double f) {
  x.basic *= f;
  x.rd *= f;
  x.dr *= f;
  x.aux *= f;
  x.two_pos *= f;
  x.contrastive *= f;
  x.total *= f;
  return x;
}

template <class F>
void visit_state_tensors(const TrainState& state, F&& f) {
  state.params.visit([&](const std::string& name, const Matrix<float>& m) { f(name, m); });
  state.moments.first.visit([&](const std::string& name, const Matrix<float>& m) { f("adam.m." + name, m); });
  state.moments.second.visit([&](const std::string& name, const Matrix<float>& m) { f("adam.v." + name, m); });
}

int count_layers(const TensorArchive& archive) {
  int layers = 0;
  for (const auto& name : archive.order) {
    if (name.rfind("layers.", 0) != 0) continue;
    auto dot_pos = name.find('.', 7);
    layers = std::max(layers, std::stoi(name.substr(7, dot_pos - 7)) + 1);
  }
  return layers;
}

ParameterSet<float> take_params(TensorArchive& archive, int n_layers, const std::string& prefix) {
  ParameterSet<float> p;
  p.layers.resize(n_layers);
  p.visit([&](const std::string& name, Matrix<float>& m) {
    auto it = archive.tensors.find(prefix + name);
    if (it == archive.tensors.end()) throw CheckpointError("checkpoint is missing tensor " + prefix + name);
    m = std::move(it->second);
  });
  return p;
}

void check_shapes(const ParameterSet<float>& expected, const ParameterSet<float>& actual, const std::string& what) {
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> shapes;
  expected.visit([&](const std::string& name, const Matrix<float>& m) {
    shapes.push_back({name, {m.rows(), m.cols()}});
  });
  std::size_t i = 0;
  actual.visit([&](const std::string& name, const Matrix<float>& m) {
    const auto& [rows, cols] = shapes[i++].second;
    if (m.rows() != rows || m.cols() != cols) {
      throw CheckpointError(what + " tensor " + name + " has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
  });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ConfigError("adam betas must be in [0, 1) and eps > 0");
  }
  weights.validate();
  encoder.validate();
}

TrainingData TrainingData::from_sequences(std::vector<UserSequence> sequences, int catalog_size) {
  TrainingData data;
  data.catalog_size = catalog_size;
  SplitResult outer = split(std::move(sequences));
  data.test = std::move(outer.test);
  data.excluded_users = outer.excluded;
  for (auto& seq : outer.train) {
    if (seq.items.size() >= 2) {
      UserSequence fit = seq;
      ItemId held = fit.items.back();
      fit.items.pop_back();
      data.validation.push_back({fit, held});
      if (fit.items.size() >= 2) data.fit.push_back(std::move(fit));
    }
  }
  return data;
}

TrainingData TrainingData::from_log(const InteractionLog& log) {
  return from_sequences(build_sequences(log), log.num_items());
}

TrainState init_state(const TrainConfig& config, int catalog_size) {
  config.validate();
  TrainState state;
  state.params = init_params<float>(config.encoder, catalog_size, config.seed);
  state.moments = AdamMoments<float>::zeros_like(state.params);
  state.seed = config.seed;
  return state;
}

LossBreakdown train_step(TrainState& state, const SequenceBatch& batch, const TrainConfig& config) {
  const LossWeights& w = config.weights;
  const int catalog = state.params.catalog_size();
  const std::int64_t step = state.step + 1;
  const auto tag = [](StreamTag t) { return static_cast<std::uint64_t>(t); };

  NegativeSamples negatives = sample_train_negatives(
      batch, config.n_neg, catalog, derive_seed(state.seed, tag(StreamTag::kTrainNegatives), step));
  const std::uint64_t seed1 = derive_seed(state.seed, tag(StreamTag::kDropout), step, 1);
  const std::uint64_t seed2 = derive_seed(state.seed, tag(StreamTag::kDropout), step, 2);
  const bool two = config.two_pass();

  PassOutput<float> pass1;
  PassOutput<float> pass2;
  if (!two) {
    pass1 = forward(state.params, config.encoder, batch, seed1, 1);
  } else if (w.consistency_source == ConsistencySource::kDropout) {
    std::tie(pass1, pass2) = forward_two_pass(state.params, config.encoder, batch, seed1, seed2);
  } else {
    // Two augmented views under one dropout mask isolate data-side inconsistency.
    AugmentKind kind = w.consistency_source == ConsistencySource::kMask ? AugmentKind::kMask : AugmentKind::kReorder;
    double ratio = kind == AugmentKind::kMask ? w.mask_ratio : w.reorder_ratio;
    SequenceBatch view1 = augment_batch(batch, kind, ratio, mask_token(catalog),
                                        derive_seed(state.seed, tag(StreamTag::kAugment), step, 1));
    SequenceBatch view2 = augment_batch(batch, kind, ratio, mask_token(catalog),
                                        derive_seed(state.seed, tag(StreamTag::kAugment), step, 2));
    pass1 = forward(state.params, config.encoder, view1, seed1, 1);
    pass2 = forward(state.params, config.encoder, view2, seed1, 2);
  }

  std::vector<std::pair<ItemId, ItemId>> positives;
  if (w.two_pos_weight > 0.0) {
    for (int b = 0; b < batch.batch_size; ++b) {
      UserSequence row = batch.row_sequence(b);
      if (row.items.size() < 2) continue;
      positives.push_back(sample_two_positives(
          row, derive_seed(state.seed, tag(StreamTag::kTwoPositives), step, static_cast<std::uint64_t>(b))));
    }
  }

  ObjectiveInputs<float> in{&pass1, two ? &pass2 : nullptr, &batch, &negatives, &state.params, positives};
  ObjectiveGradients<float> g;
  LossBreakdown loss = total_loss(in, w, &g);
  if (!std::isfinite(loss.total)) throw NonFiniteLossError(dump_batch(batch, step, loss));

  // Per-pass gradients are accumulated separately and summed last, so a
  // two-pass step over identical passes equals the single-pass step exactly.
  ParameterSet<float> grads = state.params.zeros_like();
  grads.item_embeddings = std::move(g.d_items1);
  backward(state.params, config.encoder, pass1, g.d_reps1, grads);
  if (two) {
    ParameterSet<float> grads2 = state.params.zeros_like();
    grads2.item_embeddings = std::move(g.d_items2);
    backward(state.params, config.encoder, pass2, g.d_reps2, grads2);
    grads.add(grads2);
  }
  grads.item_embeddings.row(kPaddingItem).setZero();
  if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);

  adam_update(state.params, grads, state.moments, config.learning_rate, step, config.adam);
  state.params.item_embeddings.row(kPaddingItem).setZero();
  state.step = step;
  if (!state.params.all_finite()) {
    throw NonFiniteLossError("parameters became non-finite after step " + std::to_string(step) + "\n" +
                             dump_batch(batch, step, loss));
  }
  return loss;
}

std::vector<SequenceBatch> epoch_batches(const TrainConfig& config, const TrainingData& data, int epoch) {
  return make_batches(data.fit, config.batch_size, config.encoder.max_seq_len,
                      derive_seed(config.seed, static_cast<std::uint64_t>(StreamTag::kShuffle),
                                  static_cast<std::uint64_t>(epoch)));
}

TrainResult train(const TrainConfig& config, const TrainingData& data, TrainState state,
                  const TrainHooks& hooks) {
  config.validate();
  TrainResult result;
  result.best_params = state.params;
  if (state.epoch >= config.max_epochs) {
    result.state = std::move(state);
    return result;
  }
  if (data.fit.empty()) throw DataError("no training sequences with at least two items");

  EvalProtocol valid_protocol;
  valid_protocol.negatives = std::min(config.valid_negatives, data.catalog_size - 1);
  valid_protocol.seed = derive_seed(config.seed, static_cast<std::uint64_t>(StreamTag::kValidation));
  valid_protocol.ks = {10};

  for (int epoch = state.epoch; epoch < config.max_epochs; ++epoch) {
    std::vector<SequenceBatch> batches = epoch_batches(config, data, epoch);
    EpochRecord record;
    record.epoch = epoch + 1;
    auto start = Clock::now();
    for (std::size_t b = static_cast<std::size_t>(state.batch_in_epoch); b < batches.size(); ++b) {
      LossBreakdown loss = train_step(state, batches[b], config);
      state.batch_in_epoch = static_cast<int>(b + 1);
      accumulate(record.mean_loss, loss);
      ++record.steps;
      if (hooks.on_step) {
        nlohmann::json line = to_json(loss);
        line["epoch"] = epoch + 1;
        line["step"] = state.step;
        line["epoch_seconds"] = seconds_since(start);
        line["lr"] = config.learning_rate;
        hooks.on_step(line);
      }
    }
    record.train_seconds = seconds_since(start);
    result.log.train_seconds += record.train_seconds;
    if (record.steps > 0) record.mean_loss = scaled(record.mean_loss, 1.0 / record.steps);
    state.epoch = epoch + 1;
    state.batch_in_epoch = 0;

    if (!data.validation.empty() && state.epoch % config.eval_every == 0) {
      EvalReport report = evaluate(state.params, config.encoder, data.validation, valid_protocol);
      double ndcg = report.ndcg.at(10);
      record.valid_ndcg10 = ndcg;
      if (ndcg > state.best_metric) {
        state.best_metric = ndcg;
        state.best_epoch = state.epoch;
        state.bad_evals = 0;
        result.best_params = state.params;
        if (hooks.on_best) hooks.on_best(state);
      } else {
        ++state.bad_evals;
      }
    }
    result.log.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (config.early_stop_patience > 0 && state.bad_evals >= config.early_stop_patience) {
      result.log.early_stopped = true;
      break;
    }
  }
  if (data.validation.empty()) result.best_params = state.params;
  result.state = std::move(state);
  return result;
}

TrainResult train(const TrainConfig& config, const TrainingData& data, const TrainHooks& hooks) {
  return train(config, data, init_state(config, data.catalog_size), hooks);
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  visit_state_tensors(state, [&](const std::string& name, const Matrix<float>& m) { tensors.emplace_back(name, &m); });
  write_tensor_archive(dir, tensors, kScalarNames);
  nlohmann::json scalars{{"step", state.step},
                         {"epoch", state.epoch},
                         {"batch_in_epoch", state.batch_in_epoch},
                         {"best_metric", state.best_metric},
                         {"best_epoch", state.best_epoch},
                         {"bad_evals", state.bad_evals},
                         {"seed", state.seed}};
  std::ofstream out(dir / kTrainerStateFile, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + (dir / kTrainerStateFile).string());
  out << scalars.dump(2) << '\n';
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  TensorArchive archive = read_tensor_archive(dir);
  std::ifstream in(dir / kTrainerStateFile);
  if (!in) throw CheckpointError("missing " + (dir / kTrainerStateFile).string());
  TrainState state;
  try {
    nlohmann::json s = nlohmann::json::parse(in);
    state.step = s.at("step").get<std::int64_t>();
    state.epoch = s.at("epoch").get<int>();
    state.batch_in_epoch = s.at("batch_in_epoch").get<int>();
    state.best_metric = s.at("best_metric").get<double>();
    state.best_epoch = s.at("best_epoch").get<int>();
    state.bad_evals = s.at("bad_evals").get<int>();
    state.seed = s.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt trainer state: " + std::string(e.what()));
  }
  const int n_layers = count_layers(archive);
  state.params = take_params(archive, n_layers, "");
  state.moments.first = take_params(archive, n_layers, "adam.m.");
  state.moments.second = take_params(archive, n_layers, "adam.v.");
  check_shapes(state.params, state.moments.first, "adam first-moment");
  check_shapes(state.params, state.moments.second, "adam second-moment");
  std::size_t expected = 3 * state.params.tensor_count();
  if (archive.order.size() != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(archive.order.size()) + " tensors, expected " +
                          std::to_string(expected));
  }
  return state;
}

TrainState load_checkpoint(const std::filesystem::path& dir, const EncoderConfig& config, int catalog_size) {
  TrainState state = load_checkpoint(dir);
  if (static_cast<int>(state.params.layers.size()) != config.n_layers) {
    throw CheckpointError("checkpoint has " + std::to_string(state.params.layers.size()) +
                          " layers, config expects " + std::to_string(config.n_layers));
  }
  ParameterSet<float> expected = init_params<float>(config, catalog_size, 0);
  check_shapes(expected, state.params, "parameter");
  return state;
}

}  // namespace ct4rec
