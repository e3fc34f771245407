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

#include <gtest/gtest.h>

#include <cmath>

#include "ct4rec/checkpoint.hpp"
#include "ct4rec/error.hpp"
#include "ct4rec/trainer.hpp"
#include "support/synthetic.hpp"

namespace ct4rec {
namespace {

using testing::TempDir;

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.embed_dim = 16;
  c.encoder.max_seq_len = 8;
  c.encoder.dropout_rate = 0.3;
  c.batch_size = 8;
  c.n_neg = 5;
  c.max_epochs = 2;
  c.valid_negatives = 20;
  c.seed = 17;
  return c;
}

TrainingData tiny_data(int users = 20, int catalog = 20) {
  return TrainingData::from_sequences(testing::rule_sequences(users, catalog, 5, 12, 3), catalog);
}

template <class T>
bool same(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  std::vector<const Matrix<T>*> rhs;
  b.visit([&](const std::string&, const Matrix<T>& m) { rhs.push_back(&m); });
  std::size_t i = 0;
  bool equal = rhs.size() == a.tensor_count();
  a.visit([&](const std::string&, const Matrix<T>& m) {
    equal = equal && i < rhs.size() && m.rows() == rhs[i]->rows() && m.cols() == rhs[i]->cols() && m == *rhs[i];
    ++i;
  });
  return equal;
}

bool same_state(const TrainState& a, const TrainState& b) {
  return same(a.params, b.params) && same(a.moments.first, b.moments.first) &&
         same(a.moments.second, b.moments.second) && a.step == b.step && a.epoch == b.epoch &&
         a.batch_in_epoch == b.batch_in_epoch && a.best_metric == b.best_metric &&
         a.best_epoch == b.best_epoch && a.bad_evals == b.bad_evals && a.seed == b.seed;
}

TEST(TrainConfig, Validation) {
  TrainConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.weights.alpha = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainingData, ValidationAndTestSplits) {
  std::vector<UserSequence> seqs{{0, {1, 2, 3, 4, 5}}, {1, {6, 7}}, {2, {8, 9, 10}}, {3, {4}}};
  TrainingData d = TrainingData::from_sequences(seqs, 10);
  ASSERT_EQ(d.test.size(), 3u);
  EXPECT_EQ(d.test[0].held_out, 5);
  EXPECT_EQ(d.test[0].history.items, (std::vector<ItemId>{1, 2, 3, 4}));
  ASSERT_EQ(d.validation.size(), 2u);
  EXPECT_EQ(d.validation[0].held_out, 4);
  EXPECT_EQ(d.validation[0].history.items, (std::vector<ItemId>{1, 2, 3}));
  EXPECT_EQ(d.validation[1].held_out, 9);
  ASSERT_EQ(d.fit.size(), 1u);
  EXPECT_EQ(d.fit[0].items, (std::vector<ItemId>{1, 2, 3}));
  EXPECT_EQ(d.excluded_users, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto c = tiny_config();
  auto p = init_params<float>(c.encoder, 10, 1);
  auto before = p;
  auto m = AdamMoments<float>::zeros_like(p);
  adam_update(p, p.zeros_like(), m, 0.001, 1);
  EXPECT_TRUE(same(p, before));
}

TEST(Adam, HandSteppedScalarTrace) {
  // One scalar parameter carried in the first layer-norm offset entry.
  ParameterSet<double> p;
  p.item_embeddings = Matrix<double>::Zero(3, 1);
  p.positional_embeddings = Matrix<double>::Zero(1, 1);
  p.final_ln_scale = Matrix<double>::Constant(1, 1, 0.5);
  p.final_ln_offset = Matrix<double>::Zero(1, 1);
  auto g = p.zeros_like();
  g.final_ln_scale(0, 0) = 1.0;
  auto m = AdamMoments<double>::zeros_like(p);
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  adam_update(p, g, m, lr, 1);
  double m1 = (1 - b1) * 1.0, v1 = (1 - b2) * 1.0;
  double expect = 0.5 - lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
  EXPECT_NEAR(p.final_ln_scale(0, 0), expect, 1e-15);
  EXPECT_NEAR(0.5 - p.final_ln_scale(0, 0), lr, 1e-10);
  EXPECT_NEAR(m.first.final_ln_scale(0, 0), m1, 1e-15);
  EXPECT_NEAR(m.second.final_ln_scale(0, 0), v1, 1e-15);

  g.final_ln_scale(0, 0) = -2.0;
  adam_update(p, g, m, lr, 2);
  double m2 = b1 * m1 + (1 - b1) * -2.0;
  double v2 = b2 * v1 + (1 - b2) * 4.0;
  expect -= lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
  EXPECT_NEAR(m.first.final_ln_scale(0, 0), m2, 1e-15);
  EXPECT_NEAR(m.second.final_ln_scale(0, 0), v2, 1e-15);
  EXPECT_NEAR(p.final_ln_scale(0, 0), expect, 1e-15);
  // Untouched tensors stay put.
  EXPECT_EQ(p.final_ln_offset(0, 0), 0.0);
}

TEST(Adam, ClipGlobalNorm) {
  ParameterSet<double> g;
  g.item_embeddings = Matrix<double>::Constant(2, 2, 3.0);
  g.positional_embeddings = Matrix<double>::Zero(1, 2);
  g.final_ln_scale = Matrix<double>::Constant(1, 1, 4.0);
  g.final_ln_offset = Matrix<double>::Zero(1, 1);
  EXPECT_DOUBLE_EQ(global_norm(g), std::sqrt(36.0 + 16.0));
  clip_global_norm(g, 5.0);
  EXPECT_NEAR(global_norm(g), 5.0, 1e-12);
  auto copy = g;
  clip_global_norm(g, 100.0);
  EXPECT_TRUE(same(g, copy));
}

TEST(TrainStep, DeterministicOverTenSteps) {
  auto c = tiny_config();
  auto data = tiny_data();
  TrainState a = init_state(c, data.catalog_size);
  TrainState b = init_state(c, data.catalog_size);
  auto batches = epoch_batches(c, data, 0);
  for (int s = 0; s < 10; ++s) {
    train_step(a, batches[s % batches.size()], c);
    train_step(b, batches[s % batches.size()], c);
  }
  EXPECT_EQ(a.step, 10);
  EXPECT_TRUE(same_state(a, b));
  EXPECT_TRUE(a.params.item_embeddings.row(0).isZero(0.0));
}

TEST(TrainStep, TwoPassEqualsSinglePassWithoutDropout) {
  auto single = tiny_config();
  single.encoder.dropout_rate = 0.0;
  single.weights.alpha = single.weights.beta = 0.0;
  auto twice = single;
  twice.weights.alpha = twice.weights.beta = 1.0;
  ASSERT_FALSE(single.two_pass());
  ASSERT_TRUE(twice.two_pass());
  auto data = tiny_data();
  TrainState a = init_state(single, data.catalog_size);
  TrainState b = init_state(twice, data.catalog_size);
  auto batches = epoch_batches(single, data, 0);
  for (int s = 0; s < 12; ++s) {
    LossBreakdown la = train_step(a, batches[s % batches.size()], single);
    LossBreakdown lb = train_step(b, batches[s % batches.size()], twice);
    EXPECT_EQ(lb.rd, 0.0);
    EXPECT_EQ(lb.dr, 0.0);
    EXPECT_EQ(la.basic, lb.basic);
    ASSERT_TRUE(same(a.params, b.params)) << "diverged at step " << s;
  }
}

TEST(TrainStep, LoggedBreakdownsSatisfyInvariant) {
  auto c = tiny_config();
  c.weights.aux_mode = AuxMode::kCosine;
  c.weights.aux_weight = 0.3;
  c.weights.two_pos_weight = 0.2;
  c.weights.contrastive_weight = 0.1;
  auto data = tiny_data();
  TrainState s = init_state(c, data.catalog_size);
  for (const auto& b : epoch_batches(c, data, 0)) {
    LossBreakdown l = train_step(s, b, c);
    EXPECT_NEAR(l.total, weighted_total(l, c.weights), 1e-9);
    EXPECT_GE(l.rd, 0.0);
    EXPECT_GE(l.dr, 0.0);
    EXPECT_GT(l.two_pos, 0.0);
  }
}

TEST(TrainStep, AugmentationModesRun) {
  for (auto source : {ConsistencySource::kMask, ConsistencySource::kReorder}) {
    auto c = tiny_config();
    c.weights.consistency_source = source;
    c.weights.mask_ratio = 0.5;
    c.weights.reorder_ratio = 0.5;
    auto data = tiny_data();
    TrainState s = init_state(c, data.catalog_size);
    auto batches = epoch_batches(c, data, 0);
    LossBreakdown l = train_step(s, batches[0], c);
    EXPECT_GT(l.rd, 0.0);
    EXPECT_TRUE(s.params.all_finite());
    if (source == ConsistencySource::kMask) {
      // The mask token is an input, so its embedding row is trained.
      auto fresh = init_state(c, data.catalog_size);
      EXPECT_NE(s.params.item_embeddings.row(data.catalog_size + 1),
                fresh.params.item_embeddings.row(data.catalog_size + 1));
    }
  }
}

TEST(TrainStep, NonFiniteLossAborts) {
  auto c = tiny_config();
  auto data = tiny_data();
  TrainState s = init_state(c, data.catalog_size);
  s.params.item_embeddings(3, 0) = std::numeric_limits<float>::infinity();
  auto batches = epoch_batches(c, data, 0);
  EXPECT_THROW(
      {
        for (const auto& b : batches) train_step(s, b, c);
      },
      NonFiniteLossError);
}

TEST(TrainStep, LossDecreasesOnDeterministicRule) {
  auto c = tiny_config();
  c.encoder.dropout_rate = 0.1;
  c.learning_rate = 0.005;
  auto data = tiny_data(20, 20);
  TrainState s = init_state(c, data.catalog_size);
  std::vector<double> losses;
  int step = 0;
  for (int epoch = 0; step < 200; ++epoch) {
    for (const auto& b : epoch_batches(c, data, epoch)) {
      if (step++ >= 200) break;
      losses.push_back(train_step(s, b, c).basic);
    }
  }
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Train, ZeroEpochsReturnsInitialState) {
  auto c = tiny_config();
  c.max_epochs = 0;
  auto data = tiny_data();
  TrainState init = init_state(c, data.catalog_size);
  TrainResult r = train(c, data, init);
  EXPECT_TRUE(same_state(r.state, init));
  EXPECT_TRUE(r.log.epochs.empty());
}

TEST(Train, EarlyStopAfterPatience) {
  auto c = tiny_config();
  c.learning_rate = 1e-12;  // validation metric cannot improve
  c.max_epochs = 50;
  c.early_stop_patience = 3;
  auto data = tiny_data();
  TrainResult r = train(c, data);
  EXPECT_TRUE(r.log.early_stopped);
  EXPECT_EQ(r.log.epochs.size(), 4u);  // first eval sets the best, then 3 misses
  EXPECT_EQ(r.state.best_epoch, 1);
  EXPECT_EQ(r.state.bad_evals, 3);
}

TEST(Train, LogsEpochTimingAndHooks) {
  auto c = tiny_config();
  auto data = tiny_data();
  int steps = 0, epochs = 0, bests = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const nlohmann::json& j) {
    ++steps;
    for (const char* key : {"epoch", "step", "basic", "rd", "dr", "aux", "total", "epoch_seconds", "lr"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
  };
  hooks.on_epoch = [&](const EpochRecord& r) {
    ++epochs;
    EXPECT_GE(r.train_seconds, 0.0);
    EXPECT_TRUE(r.valid_ndcg10.has_value());
  };
  hooks.on_best = [&](const TrainState&) { ++bests; };
  TrainResult r = train(c, data, hooks);
  EXPECT_EQ(epochs, 2);
  EXPECT_EQ(steps, r.state.step);
  EXPECT_GE(bests, 1);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  TempDir dir("ckpt");
  auto c = tiny_config();
  auto data = tiny_data();
  TrainState s = init_state(c, data.catalog_size);
  for (const auto& b : epoch_batches(c, data, 0)) train_step(s, b, c);
  s.best_metric = 0.123456789;
  s.best_epoch = 1;
  save_checkpoint(s, dir / "a");
  TrainState loaded = load_checkpoint(dir / "a");
  EXPECT_TRUE(same_state(s, loaded));
  save_checkpoint(loaded, dir / "b");
  for (const char* f : {"manifest.json", "tensors.bin", "trainer_state.json"}) {
    EXPECT_EQ(testing::read_file(dir / "a" / f), testing::read_file(dir / "b" / f)) << f;
  }
  auto manifest = nlohmann::json::parse(testing::read_file(dir / "a" / "manifest.json"));
  EXPECT_EQ(manifest["tensors"].size() + manifest["scalars"].size(), 3 * s.params.tensor_count() + 7);
}

TEST(Checkpoint, ResumeMatchesUninterrupted) {
  TempDir dir("resume");
  auto c = tiny_config();
  auto data = tiny_data();
  auto batches = epoch_batches(c, data, 0);
  TrainState straight = init_state(c, data.catalog_size);
  for (int s = 0; s < 5; ++s) train_step(straight, batches[s % batches.size()], c);
  TrainState resumed = init_state(c, data.catalog_size);
  for (int s = 0; s < 2; ++s) train_step(resumed, batches[s % batches.size()], c);
  save_checkpoint(resumed, dir.path());
  resumed = load_checkpoint(dir.path());
  for (int s = 2; s < 5; ++s) train_step(resumed, batches[s % batches.size()], c);
  EXPECT_TRUE(same_state(straight, resumed));
}

TEST(Checkpoint, ResumedTrainingMatchesFullRun) {
  TempDir dir("resume_train");
  auto c = tiny_config();
  c.max_epochs = 3;
  auto data = tiny_data();
  TrainResult full = train(c, data);
  auto partial_cfg = c;
  partial_cfg.max_epochs = 1;
  TrainResult partial = train(partial_cfg, data);
  save_checkpoint(partial.state, dir.path());
  TrainResult rest = train(c, data, load_checkpoint(dir.path()));
  EXPECT_TRUE(same_state(full.state, rest.state));
}

TEST(Checkpoint, ShapeMismatchAndCorruptionDetected) {
  TempDir dir("bad");
  auto c = tiny_config();
  TrainState s = init_state(c, 20);
  save_checkpoint(s, dir.path());
  EXPECT_NO_THROW(load_checkpoint(dir.path(), c.encoder, 20));
  EXPECT_THROW(load_checkpoint(dir.path(), c.encoder, 21), CheckpointError);
  auto wider = c.encoder;
  wider.embed_dim = 24;
  EXPECT_THROW(load_checkpoint(dir.path(), wider, 20), CheckpointError);
  auto deeper = c.encoder;
  deeper.n_layers = 3;
  EXPECT_THROW(load_checkpoint(dir.path(), deeper, 20), CheckpointError);

  std::filesystem::resize_file(dir / "tensors.bin", std::filesystem::file_size(dir / "tensors.bin") - 4);
  EXPECT_THROW(load_checkpoint(dir.path()), CheckpointError);
  {
    std::ofstream out(dir / "manifest.json");
    out << "{ not json";
  }
  EXPECT_THROW(load_checkpoint(dir.path()), CheckpointError);
}

}  // namespace
}  // namespace ct4rec
