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

#include <algorithm>
#include <cmath>
#include <random>

#include "ct4rec/error.hpp"
#include "ct4rec/evaluator.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace ct4rec {
namespace {

EncoderConfig eval_config() {
  EncoderConfig c;
  c.embed_dim = 16;
  c.max_seq_len = 8;
  return c;
}

std::vector<TestPair> pairs_for(const std::vector<UserSequence>& seqs) {
  return split(seqs).test;
}

TEST(Metrics, ClosedForms) {
  EXPECT_EQ(metrics_from_rank(1, 5).hit, 1);
  EXPECT_DOUBLE_EQ(metrics_from_rank(1, 1).ndcg, 1.0);
  EXPECT_DOUBLE_EQ(metrics_from_rank(3, 10).ndcg, 0.5);
  EXPECT_EQ(metrics_from_rank(3, 10).hit, 1);
  EXPECT_EQ(metrics_from_rank(11, 10).hit, 0);
  EXPECT_EQ(metrics_from_rank(11, 10).ndcg, 0.0);
  EXPECT_THROW(metrics_from_rank(0, 10), ConfigError);
}

TEST(Rank, StrictMaxAndAllTies) {
  ParameterSet<float> p;
  p.item_embeddings = Matrix<float>::Zero(503, 2);
  std::vector<float> rep{1.0f, 0.0f};
  std::vector<ItemId> negs;
  for (ItemId v = 2; v <= 501; ++v) negs.push_back(v);
  EXPECT_EQ(rank_of_target<float>(rep, 1, negs, p), 501);
  p.item_embeddings(1, 0) = 1.0f;
  EXPECT_EQ(rank_of_target<float>(rep, 1, negs, p), 1);
}

TEST(Rank, MatchesFullSortOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g(0.0f, 1.0f);
  ParameterSet<float> p;
  p.item_embeddings = Matrix<float>(42, 4);
  for (Eigen::Index i = 0; i < p.item_embeddings.size(); ++i) p.item_embeddings.data()[i] = g(rng);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> rep{g(rng), g(rng), g(rng), g(rng)};
    ItemId target = 1 + trial % 40;
    std::vector<ItemId> all;
    for (ItemId v = 1; v <= 40; ++v) all.push_back(v);
    auto scores = score<float>(rep, all, p);
    std::vector<float> by_item(41, 0.0f);
    for (ItemId v = 1; v <= 40; ++v) by_item[v] = scores[v - 1];
    std::vector<ItemId> negs;
    for (ItemId v = 1; v <= 40; ++v) {
      if (v != target) negs.push_back(v);
    }
    EXPECT_EQ(rank_of_target<float>(rep, target, negs, p), testing::oracle_rank(by_item, target));
  }
}

TEST(Evaluate, ReportInvariants) {
  auto seqs = testing::random_sequences(60, 50, 3, 10, 2);
  auto params = init_params<float>(eval_config(), 50, 3);
  EvalProtocol protocol;
  protocol.negatives = 30;
  protocol.seed = 9;
  EvalReport r = evaluate(params, eval_config(), pairs_for(seqs), protocol);
  EXPECT_EQ(r.n_users, 60u);
  EXPECT_EQ(r.negatives, 30);
  EXPECT_EQ(r.tie_rule, "pessimistic");
  double prev_hr = 0.0, prev_ndcg = 0.0;
  for (int k : protocol.ks) {
    EXPECT_LE(0.0, r.ndcg[k]);
    EXPECT_LE(r.ndcg[k], r.hr[k]);
    EXPECT_LE(r.hr[k], 1.0);
    EXPECT_GE(r.hr[k], prev_hr);
    EXPECT_GE(r.ndcg[k], prev_ndcg);
    prev_hr = r.hr[k];
    prev_ndcg = r.ndcg[k];
  }
}

TEST(Evaluate, OrderIndependentAndDeterministic) {
  auto seqs = testing::random_sequences(40, 50, 3, 10, 4);
  auto params = init_params<float>(eval_config(), 50, 5);
  EvalProtocol protocol;
  protocol.negatives = 20;
  protocol.seed = 3;
  protocol.batch_size = 7;
  auto pairs = pairs_for(seqs);
  EvalReport a = evaluate(params, eval_config(), pairs, protocol);
  std::mt19937_64 rng(0);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  EvalReport b = evaluate(params, eval_config(), pairs, protocol);
  EXPECT_EQ(a.to_json(), b.to_json());
  protocol.seed = 4;
  EXPECT_NE(a.to_json(), evaluate(params, eval_config(), pairs, protocol).to_json());
}

TEST(Evaluate, ExhaustiveIgnoresSeed) {
  auto seqs = testing::random_sequences(20, 30, 3, 10, 6);
  auto params = init_params<float>(eval_config(), 30, 7);
  EvalProtocol protocol;
  protocol.negatives = 0;
  protocol.seed = 1;
  EvalReport a = evaluate(params, eval_config(), pairs_for(seqs), protocol);
  protocol.seed = 2;
  EvalReport b = evaluate(params, eval_config(), pairs_for(seqs), protocol);
  EXPECT_EQ(a.hr, b.hr);
  EXPECT_EQ(a.ndcg, b.ndcg);
  EXPECT_EQ(a.negatives, 29);
}

TEST(Evaluate, ForcedRankingGivesPerfectHits) {
  // Items 1..4 form the histories; the target row is set to the user's own
  // representation and every other non-history row to zero.
  EncoderConfig cfg = eval_config();
  auto base = init_params<float>(cfg, 12, 9);
  auto seqs = testing::random_sequences(6, 4, 3, 6, 8);
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    TestPair pair{seqs[u], static_cast<ItemId>(5 + u)};
    Matrix<float> rep = encode_final(base, cfg, std::span<const UserSequence>(&pair.history, 1));
    ParameterSet<float> p = base;
    p.item_embeddings.bottomRows(p.item_embeddings.rows() - 5).setZero();
    p.item_embeddings.row(pair.held_out) = rep.row(0);
    EvalProtocol protocol;
    protocol.negatives = 0;
    EvalReport r = evaluate(p, cfg, std::vector<TestPair>{pair}, protocol);
    EXPECT_EQ(r.hr[1], 1.0) << "user " << u;
    EXPECT_EQ(r.negatives, 11);
  }
}

TEST(Evaluate, EmptySetIsAnError) {
  auto params = init_params<float>(eval_config(), 10, 1);
  EXPECT_THROW(evaluate(params, eval_config(), std::vector<TestPair>{}, EvalProtocol{}), DataError);
}

TEST(Report, JsonRoundTripAndTable) {
  EvalReport r;
  r.hr = {{1, 0.25}, {10, 0.5}};
  r.ndcg = {{1, 0.25}, {10, 0.375}};
  r.n_users = 8;
  r.negatives = 100;
  r.seed = 12345678901234567ull;
  EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.hr, r.hr);
  EXPECT_EQ(back.ndcg, r.ndcg);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(back.n_users, r.n_users);
  std::string table = r.to_table();
  EXPECT_NE(table.find("HR@10"), std::string::npos);
  EXPECT_NE(table.find("NDCG@1"), std::string::npos);
}

}  // namespace
}  // namespace ct4rec
