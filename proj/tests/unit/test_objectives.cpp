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
#include <numeric>
#include <random>

#include "ct4rec/error.hpp"
#include "ct4rec/gradcheck.hpp"
#include "ct4rec/objectives.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace ct4rec {
namespace {

using testing::Mat;
using testing::Vec;

Vec random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Vec z(n);
  for (auto& v : z) v = u(rng);
  return testing::oracle_softmax(z);
}

Mat random_mat(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, Vec(d));
  for (auto& row : m) {
    for (auto& v : row) v = g(rng);
  }
  return m;
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.alpha = -0.1;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.beta = -1;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.dr_temperature = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.contrastive_temperature = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.alpha = std::nan("");
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(LossWeights, TwoPassRequirement) {
  LossWeights w;
  EXPECT_TRUE(w.needs_two_passes());
  w.alpha = w.beta = 0.0;
  EXPECT_FALSE(w.needs_two_passes());
  w.aux_mode = AuxMode::kCosine;
  EXPECT_FALSE(w.needs_two_passes());  // zero aux weight
  w.aux_weight = 0.5;
  EXPECT_TRUE(w.needs_two_passes());
  w = {};
  w.alpha = w.beta = 0.0;
  w.two_pos_weight = 1.0;
  EXPECT_FALSE(w.needs_two_passes());
}

TEST(Parsers, RoundTripNames) {
  for (auto m : {AuxMode::kNone, AuxMode::kCosine, AuxMode::kL2, AuxMode::kRepKl}) {
    EXPECT_EQ(parse_aux_mode(to_string(m)), m);
  }
  for (auto s : {ConsistencySource::kDropout, ConsistencySource::kMask, ConsistencySource::kReorder}) {
    EXPECT_EQ(parse_consistency_source(to_string(s)), s);
  }
  EXPECT_EQ(parse_similarity("inner_product"), SimilarityKind::kInnerProduct);
  EXPECT_THROW(parse_aux_mode("kl"), ConfigError);
}

TEST(SampledSoftmax, SymmetricTwoWay) {
  Matrix<double> items = Matrix<double>::Zero(4, 2);
  items.row(1) << 1.0, 0.0;
  items.row(2) << 0.0, 1.0;
  std::vector<double> rep{0.7, 0.7};
  std::vector<ItemId> negs{2};
  EXPECT_NEAR(sampled_softmax_loss<double>(rep, 1, negs, items), std::log(2.0), 1e-15);
}

TEST(SampledSoftmax, Saturation) {
  Matrix<double> items = Matrix<double>::Zero(4, 1);
  items(1, 0) = 30.0;
  std::vector<double> rep{1.0};
  std::vector<ItemId> negs{2};
  EXPECT_LT(sampled_softmax_loss<double>(rep, 1, negs, items), 1e-12);
}

TEST(SampledSoftmax, ThreeCandidateDirectSum) {
  Matrix<double> items = Matrix<double>::Zero(5, 1);
  items(1, 0) = 1.0;
  std::vector<double> rep{1.0};
  std::vector<ItemId> negs{2, 3};
  const double e = std::exp(1.0);
  EXPECT_NEAR(sampled_softmax_loss<double>(rep, 1, negs, items), -std::log(e / (e + 2.0)), 1e-15);
}

TEST(SampledSoftmax, GradientTouchesCandidatesOnly) {
  std::mt19937_64 rng(3);
  Matrix<double> items = testing::to_matrix<double>(random_mat(rng, 8, 3));
  std::vector<double> rep{0.2, -0.4, 0.9};
  std::vector<ItemId> negs{2, 5};
  std::vector<double> d_rep(3, 0.0);
  Matrix<double> d_items = Matrix<double>::Zero(8, 3);
  sampled_softmax_loss<double>(rep, 4, negs, items, d_rep, &d_items);
  for (int r : {0, 1, 3, 6, 7}) EXPECT_TRUE(d_items.row(r).isZero(0.0));
  // The gradient wrt the representation is the softmax-weighted candidate mean minus the positive.
  Vec logits{testing::oracle_dot(rep, {items(4, 0), items(4, 1), items(4, 2)}),
             testing::oracle_dot(rep, {items(2, 0), items(2, 1), items(2, 2)}),
             testing::oracle_dot(rep, {items(5, 0), items(5, 1), items(5, 2)})};
  Vec p = testing::oracle_softmax(logits);
  for (int j = 0; j < 3; ++j) {
    double expect = (p[0] - 1.0) * items(4, j) + p[1] * items(2, j) + p[2] * items(5, j);
    EXPECT_NEAR(d_rep[j], expect, 1e-14);
  }
}

TEST(BidirectionalKl, KnownValues) {
  Vec p{0.5, 0.5};
  Vec q{0.9, 0.1};
  const double value = bidirectional_kl<double>(p, q);
  EXPECT_NEAR(value, testing::oracle_kl(p, q), 1e-15);
  EXPECT_NEAR(value, 0.4394449154672439, 1e-12);
  EXPECT_EQ(bidirectional_kl<double>(p, p), 0.0);
}

TEST(BidirectionalKl, SymmetricNonNegativeAgreeing) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7;
    Vec p = random_simplex(rng, n);
    Vec q = random_simplex(rng, n);
    const double pq = bidirectional_kl<double>(p, q);
    EXPECT_NEAR(pq, testing::oracle_kl(p, q), 1e-12);
    EXPECT_DOUBLE_EQ(pq, bidirectional_kl<double>(q, p));
    EXPECT_GT(pq, 0.0);
  }
}

TEST(BidirectionalKl, ClampAndErrors) {
  Vec p{1.0, 0.0};
  Vec q{0.5, 0.5};
  EXPECT_TRUE(std::isfinite(bidirectional_kl<double>(p, q)));
  EXPECT_NEAR(bidirectional_kl<double>(p, q), testing::oracle_kl(p, q), 1e-12);
  Vec r{0.2, 0.3, 0.5};
  EXPECT_THROW(bidirectional_kl<double>(p, r), DataError);
}

TEST(BidirectionalKl, LogitFormMatchesProbabilityForm) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(5), b(5);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    EXPECT_NEAR(bidirectional_kl_logits<double>(a, b),
                testing::oracle_kl(testing::oracle_softmax(a), testing::oracle_softmax(b)), 1e-12);
  }
}

TEST(DrDistribution, DegenerateCases) {
  Matrix<double> same = Matrix<double>::Ones(4, 3);
  auto p = dr_similarity_distribution<double>(same, 1, 0.2);
  ASSERT_EQ(p.size(), 3u);
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Matrix<double> two(2, 2);
  two << 1, 0, 0, 1;
  auto q = dr_similarity_distribution<double>(two, 0, 0.2);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_DOUBLE_EQ(q[0], 1.0);
}

TEST(DrDistribution, HandTrigonometry) {
  const double pi = std::acos(-1.0);
  Matrix<double> reps(3, 2);
  reps << 1, 0, std::cos(pi / 3), std::sin(pi / 3), 0, 2;
  auto p = dr_similarity_distribution<double>(reps, 0, 0.2);
  // cos 60 = 0.5, cos 90 = 0 -> softmax(2.5, 0).
  const double e = std::exp(2.5);
  EXPECT_NEAR(p[0], e / (e + 1.0), 1e-14);
  EXPECT_NEAR(p[1], 1.0 / (e + 1.0), 1e-14);
}

TEST(DrDistribution, ScaleInvariantAndZeroNorm) {
  std::mt19937_64 rng(4);
  Matrix<double> reps = testing::to_matrix<double>(random_mat(rng, 5, 4));
  auto p = dr_similarity_distribution<double>(reps, 2, 0.2);
  auto q = dr_similarity_distribution<double>(Matrix<double>(reps * 7.5), 2, 0.2);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-14);
  double sum = std::accumulate(p.begin(), p.end(), 0.0);
  EXPECT_NEAR(sum, 1.0, 1e-12);
  reps.row(3).setZero();
  auto z = dr_similarity_distribution<double>(reps, 3, 0.2);
  for (double v : z) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(DistributionRegularization, MatchesOracleAndPermutationInvariant) {
  std::mt19937_64 rng(5);
  Mat a = random_mat(rng, 6, 4);
  Mat b = random_mat(rng, 6, 4);
  double value = distribution_regularization<double>(testing::to_matrix<double>(a), testing::to_matrix<double>(b), 0.2);
  EXPECT_NEAR(value, testing::oracle_dr_loss(a, b, 0.2), 1e-12);
  Mat pa = a;
  Mat pb = b;
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  for (int i = 0; i < 6; ++i) {
    pa[i] = a[perm[i]];
    pb[i] = b[perm[i]];
  }
  EXPECT_NEAR(distribution_regularization<double>(testing::to_matrix<double>(pa), testing::to_matrix<double>(pb), 0.2),
              value, 1e-12);
  EXPECT_EQ(distribution_regularization<double>(testing::to_matrix<double>(a), testing::to_matrix<double>(a), 0.2),
            0.0);
  EXPECT_THROW(distribution_regularization<double>(testing::to_matrix<double>(Mat{a[0]}),
                                                   testing::to_matrix<double>(Mat{b[0]}), 0.2),
               DataError);
}

TEST(AuxTerms, CosineCases) {
  Matrix<double> a(3, 2), b(3, 2);
  a << 1, 0, 1, 0, 1, 1;
  b << 2, 0, -1, 0, -1, 1;
  // identical direction -> 0, opposite -> 2, orthogonal -> 1
  EXPECT_NEAR(cosine_consistency<double>(a.topRows(1), b.topRows(1)), 0.0, 1e-15);
  EXPECT_NEAR(cosine_consistency<double>(a.middleRows(1, 1), b.middleRows(1, 1)), 2.0, 1e-15);
  EXPECT_NEAR(cosine_consistency<double>(a.bottomRows(1), b.bottomRows(1)), 1.0, 1e-15);
  EXPECT_NEAR(cosine_consistency<double>(a, b), 1.0, 1e-15);
  Matrix<double> z = Matrix<double>::Zero(1, 2);
  EXPECT_EQ(cosine_consistency<double>(z, a.topRows(1)), 1.0);
}

TEST(AuxTerms, L2Cases) {
  Matrix<double> a = Matrix<double>::Zero(1, 50);
  Matrix<double> b = a;
  EXPECT_EQ(l2_consistency<double>(a, b), 0.0);
  b(0, 17) = 1.0;
  EXPECT_DOUBLE_EQ(l2_consistency<double>(a, b), 0.02);
  std::mt19937_64 rng(6);
  Mat x = random_mat(rng, 4, 5);
  Mat y = random_mat(rng, 4, 5);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) expect += (x[i][j] - y[i][j]) * (x[i][j] - y[i][j]) / 5.0;
  }
  EXPECT_NEAR(l2_consistency<double>(testing::to_matrix<double>(x), testing::to_matrix<double>(y)), expect / 4.0,
              1e-14);
}

TEST(TwoPositive, Cases) {
  Matrix<double> items = Matrix<double>::Zero(5, 2);
  items.row(1) << 1, 0;
  items.row(2) << 0, 3;
  items.row(3) << 1, 1;
  std::vector<std::pair<ItemId, ItemId>> same{{1, 1}};
  std::vector<std::pair<ItemId, ItemId>> ortho{{1, 2}};
  std::vector<std::pair<ItemId, ItemId>> diag{{1, 3}};
  EXPECT_NEAR(two_positive_consistency<double>(same, items), 0.0, 1e-15);
  EXPECT_NEAR(two_positive_consistency<double>(ortho, items), 1.0, 1e-15);
  EXPECT_NEAR(two_positive_consistency<double>(diag, items), 1.0 - std::sqrt(2.0) / 2.0, 1e-15);
  std::vector<std::pair<ItemId, ItemId>> all{{1, 1}, {1, 2}, {1, 3}};
  EXPECT_NEAR(two_positive_consistency<double>(all, items), (2.0 - std::sqrt(2.0) / 2.0) / 3.0, 1e-15);
}

TEST(Contrastive, Cases) {
  Matrix<double> eye = Matrix<double>::Identity(3, 3);
  EXPECT_LT(in_batch_contrastive<double>(eye, eye, 0.05), 1e-6);
  Matrix<double> same = Matrix<double>::Ones(4, 3);
  EXPECT_NEAR(in_batch_contrastive<double>(same, same, 1.0), std::log(4.0), 1e-14);
  std::mt19937_64 rng(7);
  Mat a = random_mat(rng, 3, 4);
  Mat b = random_mat(rng, 3, 4);
  EXPECT_NEAR(in_batch_contrastive<double>(testing::to_matrix<double>(a), testing::to_matrix<double>(b), 0.7),
              testing::oracle_contrastive(a, b, 0.7), 1e-12);
  EXPECT_THROW(in_batch_contrastive<double>(eye.topRows(1), eye.topRows(1), 1.0), DataError);
}

// Builds a two-pass toy batch with hand-set embeddings for batch-level checks.
struct Toy {
  EncoderConfig cfg;
  ParameterSet<double> params;
  SequenceBatch batch;
  NegativeSamples negs;
  PassOutput<double> p1, p2;
};

Toy make_toy(double dropout) {
  Toy t;
  t.cfg.embed_dim = 8;
  t.cfg.max_seq_len = 3;
  t.cfg.dropout_rate = dropout;
  t.params = init_params<double>(t.cfg, 10, 1);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.5);
  t.params.visit([&](const std::string&, Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += g(rng);
  });
  t.params.item_embeddings.row(0).setZero();
  std::vector<UserSequence> seqs{{0, {1, 2, 3, 4}}, {1, {5, 6}}, {2, {7, 8, 9}}};
  t.batch = make_batch(seqs, std::vector<std::size_t>{0, 1, 2}, 3);
  t.negs = sample_train_negatives(t.batch, 3, 10, 4);
  std::tie(t.p1, t.p2) = forward_two_pass(t.params, t.cfg, t.batch, 5, 6);
  return t;
}

std::vector<double> step_logits(const Toy& t, const PassOutput<double>& pass, int b, int s) {
  std::vector<ItemId> cands{t.batch.target(b, s)};
  for (ItemId v : t.negs.at(b, s)) cands.push_back(v);
  return score<double>(pass.at(b, s), cands, t.params);
}

TEST(BatchTerms, BasicIsMeanOfPassLosses) {
  Toy t = make_toy(0.4);
  double sum1 = 0.0, sum2 = 0.0;
  int n = 0;
  for (int b = 0; b < 3; ++b) {
    for (int s = 0; s < 3; ++s) {
      if (!t.batch.valid(b, s)) continue;
      sum1 += testing::oracle_sampled_softmax(step_logits(t, t.p1, b, s));
      sum2 += testing::oracle_sampled_softmax(step_logits(t, t.p2, b, s));
      ++n;
    }
  }
  EXPECT_NEAR(basic_loss_two_pass(t.p1, t.p2, t.batch, t.negs, t.params), 0.5 * (sum1 + sum2) / n, 1e-12);
}

TEST(BatchTerms, RdComposesOracles) {
  Toy t = make_toy(0.4);
  double sum = 0.0;
  int n = 0;
  for (int b = 0; b < 3; ++b) {
    for (int s = 0; s < 3; ++s) {
      if (!t.batch.valid(b, s)) continue;
      sum += testing::oracle_kl(testing::oracle_softmax(step_logits(t, t.p1, b, s)),
                                testing::oracle_softmax(step_logits(t, t.p2, b, s)));
      ++n;
    }
  }
  const double rd = rd_loss(t.p1, t.p2, t.batch, t.negs, t.params);
  EXPECT_NEAR(rd, sum / n, 1e-12);
  EXPECT_GT(rd, 0.0);
}

TEST(BatchTerms, DrUsesFinalPositions) {
  Toy t = make_toy(0.4);
  Mat r1, r2;
  for (int b = 0; b < 3; ++b) {
    auto x = t.p1.at(b, 2);
    auto y = t.p2.at(b, 2);
    r1.emplace_back(x.begin(), x.end());
    r2.emplace_back(y.begin(), y.end());
  }
  EXPECT_NEAR(dr_loss(t.p1, t.p2, t.batch, 0.2), testing::oracle_dr_loss(r1, r2, 0.2), 1e-12);
  EXPECT_EQ(aux_rep_kl(t.p1, t.p2, t.batch, 0.2), dr_loss(t.p1, t.p2, t.batch, 0.2));
  EXPECT_NE(aux_rep_kl(t.p1, t.p2, t.batch, 0.1), aux_rep_kl(t.p1, t.p2, t.batch, 0.2));
}

TEST(BatchTerms, ZeroDropoutZeroesConsistency) {
  Toy t = make_toy(0.0);
  EXPECT_EQ(rd_loss(t.p1, t.p2, t.batch, t.negs, t.params), 0.0);
  EXPECT_EQ(dr_loss(t.p1, t.p2, t.batch, 0.2), 0.0);
  EXPECT_NEAR(aux_cosine(t.p1, t.p2, t.batch), 0.0, 1e-15);  // 1 - cos(h, h) rounds to a few ulps
  EXPECT_EQ(aux_l2(t.p1, t.p2, t.batch), 0.0);
  auto single = forward(t.params, t.cfg, t.batch, std::nullopt);
  ObjectiveInputs<double> one{&single, nullptr, &t.batch, &t.negs, &t.params, {}};
  LossWeights off;
  off.alpha = off.beta = 0.0;
  EXPECT_EQ(basic_loss_two_pass(t.p1, t.p2, t.batch, t.negs, t.params), total_loss(one, off).basic);
}

TEST(TotalLoss, BreakdownInvariantAndSkippedTerms) {
  Toy t = make_toy(0.4);
  LossWeights w;
  w.alpha = 0.7;
  w.beta = 1.3;
  w.aux_mode = AuxMode::kL2;
  w.aux_weight = 0.4;
  w.contrastive_weight = 0.2;
  w.two_pos_weight = 0.5;
  std::vector<std::pair<ItemId, ItemId>> pos{{1, 3}, {5, 6}, {7, 9}};
  ObjectiveInputs<double> in{&t.p1, &t.p2, &t.batch, &t.negs, &t.params, pos};
  ObjectiveGradients<double> g;
  LossBreakdown b = total_loss(in, w, &g);
  EXPECT_NEAR(b.total, weighted_total(b, w), 1e-12);
  EXPECT_GT(b.rd, 0.0);
  EXPECT_GT(b.dr, 0.0);
  EXPECT_GT(b.aux, 0.0);
  EXPECT_GT(b.two_pos, 0.0);
  EXPECT_GT(b.contrastive, 0.0);

  LossWeights base;
  base.alpha = base.beta = 0.0;
  LossBreakdown only = total_loss(in, base);
  EXPECT_EQ(only.rd, 0.0);
  EXPECT_EQ(only.dr, 0.0);
  EXPECT_EQ(only.total, only.basic);
  EXPECT_EQ(only.basic, b.basic);
}

TEST(TotalLoss, ConsistencyWithoutSecondPassRejected) {
  Toy t = make_toy(0.4);
  ObjectiveInputs<double> in{&t.p1, nullptr, &t.batch, &t.negs, &t.params, {}};
  EXPECT_THROW(total_loss(in, LossWeights{}), ConfigError);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  GradcheckReport r = run_gradcheck();
  for (const auto& c : r.components) EXPECT_TRUE(c.passed) << c.component << " " << c.max_rel_error;
  EXPECT_EQ(r.components.size(), gradcheck_components().size());
}

TEST(TotalLoss, DrOverAllPositionsFlag) {
  Toy t = make_toy(0.4);
  LossWeights w;
  w.alpha = 0.0;
  ObjectiveInputs<double> in{&t.p1, &t.p2, &t.batch, &t.negs, &t.params, {}};
  LossBreakdown last = total_loss(in, w);
  w.dr_all_positions = true;
  LossBreakdown all = total_loss(in, w);
  EXPECT_NE(last.dr, all.dr);
  EXPECT_GT(all.dr, 0.0);
}

TEST(Gradcheck, FaultInjectionHitsOnlyThatComponent) {
  GradcheckOptions o;
  o.components = {"basic", "dr", "two_pos"};
  o.corrupt = "dr";
  GradcheckReport r = run_gradcheck(o);
  EXPECT_FALSE(r.passed);
  EXPECT_TRUE(r.find("basic")->passed);
  EXPECT_FALSE(r.find("dr")->passed);
  EXPECT_TRUE(r.find("two_pos")->passed);
  o.components = {"bogus"};
  EXPECT_THROW(run_gradcheck(o), ConfigError);
}

}  // namespace
}  // namespace ct4rec
