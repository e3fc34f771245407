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

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct4rec/corpus.hpp"
#include "ct4rec/encoder.hpp"
#include "ct4rec/tensor.hpp"

namespace ct4rec {

enum class AuxMode { kNone, kCosine, kL2, kRepKl };
enum class ConsistencySource { kDropout, kMask, kReorder };
enum class SimilarityKind { kCosine, kInnerProduct };

AuxMode parse_aux_mode(std::string_view name);
std::string_view to_string(AuxMode mode);
ConsistencySource parse_consistency_source(std::string_view name);
std::string_view to_string(ConsistencySource source);
SimilarityKind parse_similarity(std::string_view name);
std::string_view to_string(SimilarityKind kind);

struct LossWeights {
  double alpha = 1.0;  // output-space (RD) consistency
  double beta = 1.0;   // representation-space (DR) consistency
  double dr_temperature = 0.2;
  AuxMode aux_mode = AuxMode::kNone;
  double aux_weight = 0.0;
  double two_pos_weight = 0.0;
  double contrastive_weight = 0.0;
  double contrastive_temperature = 1.0;
  ConsistencySource consistency_source = ConsistencySource::kDropout;
  double mask_ratio = 0.3;
  double reorder_ratio = 0.3;
  SimilarityKind dr_similarity = SimilarityKind::kCosine;
  bool dr_all_positions = false;

  void validate() const;
  double effective_aux_weight() const { return aux_mode == AuxMode::kNone ? 0.0 : aux_weight; }
  /// True when some active term compares two passes.
  bool needs_two_passes() const;
};

struct LossBreakdown {
  double basic = 0.0;
  double rd = 0.0;
  double dr = 0.0;
  double aux = 0.0;
  double two_pos = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

nlohmann::json to_json(const LossBreakdown& b);

/// Recomputes basic + a*rd + b*dr + ... from the components.
double weighted_total(const LossBreakdown& b, const LossWeights& w);

// ---------------------------------------------------------------------------
// Vector-level building blocks.

template <class T>
T log_sum_exp(std::span<const T> logits);

template <class T>
std::vector<T> softmax(std::span<const T> logits);

template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b);

/// -log softmax(positive | {positive} + negatives). Optionally accumulates
/// scale * gradient into d_rep and the touched rows of d_items.
template <class T>
T sampled_softmax_loss(std::span<const T> rep, ItemId positive, std::span<const ItemId> negatives,
                       const Matrix<T>& item_embeddings, std::span<T> d_rep = {},
                       Matrix<T>* d_items = nullptr, T scale = T(1));

/// 0.5 * (KL(p||q) + KL(q||p)) with probabilities clamped at 1e-12 inside logs.
template <class T>
T bidirectional_kl(std::span<const T> p, std::span<const T> q);

/// bidirectional_kl(softmax(a), softmax(b)); accumulates scale * gradients
/// with respect to the logits when da / db are non-empty.
template <class T>
T bidirectional_kl_logits(std::span<const T> a, std::span<const T> b, std::span<T> da = {},
                          std::span<T> db = {}, T scale = T(1));

/// Softmax over sim(reps_i, reps_j) / tau for j != i, in increasing j.
template <class T>
std::vector<T> dr_similarity_distribution(const Matrix<T>& reps, int i, T tau,
                                          SimilarityKind kind = SimilarityKind::kCosine);

// ---------------------------------------------------------------------------
// Matrix-level terms. Rows are users. Gradient outputs, when given, must be
// pre-sized and receive scale * gradient.

template <class T>
T distribution_regularization(const Matrix<T>& reps1, const Matrix<T>& reps2, T tau,
                              SimilarityKind kind = SimilarityKind::kCosine,
                              Matrix<T>* d1 = nullptr, Matrix<T>* d2 = nullptr, T scale = T(1));

/// mean over rows of 1 - cos(a_u, b_u); zero-norm rows contribute 1.
template <class T>
T cosine_consistency(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>* da = nullptr,
                     Matrix<T>* db = nullptr, T scale = T(1));

/// mean over rows of ||a_u - b_u||^2 / d.
template <class T>
T l2_consistency(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>* da = nullptr,
                 Matrix<T>* db = nullptr, T scale = T(1));

/// Symmetric InfoNCE over cosine(view1_i, view2_j) / temperature.
template <class T>
T in_batch_contrastive(const Matrix<T>& view1, const Matrix<T>& view2, T temperature,
                       Matrix<T>* d1 = nullptr, Matrix<T>* d2 = nullptr, T scale = T(1));

/// mean over pairs of 1 - cos(E[a], E[b]).
template <class T>
T two_positive_consistency(std::span<const std::pair<ItemId, ItemId>> pairs,
                           const Matrix<T>& item_embeddings, Matrix<T>* d_items = nullptr,
                           T scale = T(1));

// ---------------------------------------------------------------------------
// Batch-level objective.

template <class T>
struct ObjectiveInputs {
  const PassOutput<T>* pass1 = nullptr;
  const PassOutput<T>* pass2 = nullptr;  // null for single-pass training
  const SequenceBatch* batch = nullptr;
  const NegativeSamples* negatives = nullptr;
  const ParameterSet<T>* params = nullptr;
  std::span<const std::pair<ItemId, ItemId>> positives;  // one pair per user, for two_pos
};

/// Gradients with respect to each pass's representations and the direct
/// (scoring) gradients into the item table, kept per pass.
template <class T>
struct ObjectiveGradients {
  Matrix<T> d_reps1, d_reps2;
  Matrix<T> d_items1, d_items2;
};

/// Multiplier applied to each term's gradient. Normally derived from the
/// loss weights; the gradient checker isolates one term at a time.
struct TermScales {
  double basic = 1.0;
  double rd = 0.0;
  double dr = 0.0;
  double aux = 0.0;
  double two_pos = 0.0;
  double contrastive = 0.0;

  static TermScales from(const LossWeights& w);
};

/// Final-position representation of every row with at least one valid step.
template <class T>
Matrix<T> final_representations(const PassOutput<T>& pass, const SequenceBatch& batch);

/// Weighted training objective. Terms with zero scale are skipped. When
/// `grads` is non-null it is resized and filled.
template <class T>
LossBreakdown total_loss(const ObjectiveInputs<T>& in, const LossWeights& weights,
                         ObjectiveGradients<T>* grads = nullptr);

template <class T>
LossBreakdown evaluate_terms(const ObjectiveInputs<T>& in, const LossWeights& weights,
                             const TermScales& scales, ObjectiveGradients<T>* grads = nullptr);

// Standalone batch-level values, each computed on its own.

template <class T>
T basic_loss_two_pass(const PassOutput<T>& pass1, const PassOutput<T>& pass2,
                      const SequenceBatch& batch, const NegativeSamples& negatives,
                      const ParameterSet<T>& params);

template <class T>
T rd_loss(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch,
          const NegativeSamples& negatives, const ParameterSet<T>& params);

template <class T>
T dr_loss(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch, T tau);

template <class T>
T aux_cosine(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch);

template <class T>
T aux_l2(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch);

template <class T>
T aux_rep_kl(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch, T tau);

}  // namespace ct4rec
