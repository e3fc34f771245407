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

#include "ct4rec/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "ct4rec/error.hpp"

namespace ct4rec {

namespace {

constexpr double kLogEps = 1e-12;

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }
bool non_negative_finite(double v) { return std::isfinite(v) && v >= 0.0; }

template <class T>
T norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// Adds scale * g * d sim(a, b) / d a and / d b.
template <class T>
void similarity_backward(std::span<const T> a, std::span<const T> b, T g, SimilarityKind kind,
                         std::span<T> da, std::span<T> db) {
  const std::size_t d = a.size();
  if (kind == SimilarityKind::kInnerProduct) {
    for (std::size_t k = 0; k < d; ++k) {
      if (!da.empty()) da[k] += g * b[k];
      if (!db.empty()) db[k] += g * a[k];
    }
    return;
  }
  T na = norm(a);
  T nb = norm(b);
  if (na == T(0) || nb == T(0)) return;
  T c = dot(a, b) / (na * nb);
  for (std::size_t k = 0; k < d; ++k) {
    if (!da.empty()) da[k] += g * (b[k] / (na * nb) - c * a[k] / (na * na));
    if (!db.empty()) db[k] += g * (a[k] / (na * nb) - c * b[k] / (nb * nb));
  }
}

template <class T>
T similarity(std::span<const T> a, std::span<const T> b, SimilarityKind kind) {
  return kind == SimilarityKind::kCosine ? cosine_similarity(a, b) : dot(a, b);
}

/// Logits of row i against every other row, in increasing j.
template <class T>
std::vector<T> dr_logits(const Matrix<T>& reps, int i, T tau, SimilarityKind kind) {
  std::vector<T> z;
  z.reserve(reps.rows() - 1);
  for (Eigen::Index j = 0; j < reps.rows(); ++j) {
    if (j == i) continue;
    z.push_back(similarity(row_span(reps, i), row_span(reps, j), kind) / tau);
  }
  return z;
}

template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError(std::string(what) + ": shape mismatch between the two inputs");
  }
}

}  // namespace

AuxMode parse_aux_mode(std::string_view name) {
  if (name == "none") return AuxMode::kNone;
  if (name == "cosine") return AuxMode::kCosine;
  if (name == "l2") return AuxMode::kL2;
  if (name == "rep_kl") return AuxMode::kRepKl;
  throw ConfigError("unknown aux_mode '" + std::string(name) + "' (none|cosine|l2|rep_kl)");
}

std::string_view to_string(AuxMode mode) {
  switch (mode) {
    case AuxMode::kNone: return "none";
    case AuxMode::kCosine: return "cosine";
    case AuxMode::kL2: return "l2";
    case AuxMode::kRepKl: return "rep_kl";
  }
  return "none";
}

ConsistencySource parse_consistency_source(std::string_view name) {
  if (name == "dropout") return ConsistencySource::kDropout;
  if (name == "mask") return ConsistencySource::kMask;
  if (name == "reorder") return ConsistencySource::kReorder;
  throw ConfigError("unknown consistency_source '" + std::string(name) + "' (dropout|mask|reorder)");
}

std::string_view to_string(ConsistencySource source) {
  switch (source) {
    case ConsistencySource::kDropout: return "dropout";
    case ConsistencySource::kMask: return "mask";
    case ConsistencySource::kReorder: return "reorder";
  }
  return "dropout";
}

SimilarityKind parse_similarity(std::string_view name) {
  if (name == "cosine") return SimilarityKind::kCosine;
  if (name == "inner_product") return SimilarityKind::kInnerProduct;
  throw ConfigError("unknown dr_similarity '" + std::string(name) + "' (cosine|inner_product)");
}

std::string_view to_string(SimilarityKind kind) {
  return kind == SimilarityKind::kCosine ? "cosine" : "inner_product";
}

void LossWeights::validate() const {
  for (double w : {alpha, beta, aux_weight, two_pos_weight, contrastive_weight}) {
    if (!non_negative_finite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!positive_finite(dr_temperature) || !positive_finite(contrastive_temperature)) {
    throw ConfigError("temperatures must be finite and > 0");
  }
  for (double r : {mask_ratio, reorder_ratio}) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("augmentation ratios must be in [0, 1)");
  }
}

bool LossWeights::needs_two_passes() const {
  return alpha > 0.0 || beta > 0.0 || effective_aux_weight() > 0.0 || contrastive_weight > 0.0;
}

nlohmann::json to_json(const LossBreakdown& b) {
  return nlohmann::json{{"basic", b.basic}, {"rd", b.rd},           {"dr", b.dr},
                        {"aux", b.aux},     {"two_pos", b.two_pos}, {"contrastive", b.contrastive},
                        {"total", b.total}};
}

double weighted_total(const LossBreakdown& b, const LossWeights& w) {
  return b.basic + w.alpha * b.rd + w.beta * b.dr + w.effective_aux_weight() * b.aux +
         w.two_pos_weight * b.two_pos + w.contrastive_weight * b.contrastive;
}

TermScales TermScales::from(const LossWeights& w) {
  return {1.0, w.alpha, w.beta, w.effective_aux_weight(), w.two_pos_weight, w.contrastive_weight};
}

template <class T>
T log_sum_exp(std::span<const T> logits) {
  T mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) return mx;
  T sum = 0;
  for (T z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum);
}

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  T lse = log_sum_exp(logits);
  std::vector<T> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  T na = norm(a);
  T nb = norm(b);
  if (na == T(0) || nb == T(0)) return T(0);
  return dot(a, b) / (na * nb);
}

template <class T>
T sampled_softmax_loss(std::span<const T> rep, ItemId positive, std::span<const ItemId> negatives,
                       const Matrix<T>& item_embeddings, std::span<T> d_rep, Matrix<T>* d_items,
                       T scale) {
  std::vector<T> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(dot(rep, row_span(item_embeddings, positive)));
  for (ItemId v : negatives) logits.push_back(dot(rep, row_span(item_embeddings, v)));
  T lse = log_sum_exp<T>(logits);
  T loss = lse - logits[0];
  if (!d_rep.empty() || d_items != nullptr) {
    for (std::size_t c = 0; c < logits.size(); ++c) {
      T g = std::exp(logits[c] - lse) - (c == 0 ? T(1) : T(0));
      g *= scale;
      ItemId id = c == 0 ? positive : negatives[c - 1];
      auto emb = row_span(item_embeddings, id);
      for (std::size_t k = 0; k < rep.size(); ++k) {
        if (!d_rep.empty()) d_rep[k] += g * emb[k];
        if (d_items != nullptr) (*d_items)(id, static_cast<Eigen::Index>(k)) += g * rep[k];
      }
    }
  }
  return loss;
}

template <class T>
T bidirectional_kl(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size()) throw DataError("bidirectional_kl: length mismatch");
  const T eps = static_cast<T>(kLogEps);
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    T lp = std::log(std::max(p[i], eps));
    T lq = std::log(std::max(q[i], eps));
    acc += (p[i] - q[i]) * (lp - lq);
  }
  return acc / T(2);
}

template <class T>
T bidirectional_kl_logits(std::span<const T> a, std::span<const T> b, std::span<T> da,
                          std::span<T> db, T scale) {
  if (a.size() != b.size()) throw DataError("bidirectional_kl: length mismatch");
  const std::size_t n = a.size();
  const T log_eps = std::log(static_cast<T>(kLogEps));
  const T lse_a = log_sum_exp(a);
  const T lse_b = log_sum_exp(b);
  std::vector<T> p(n), q(n), la(n), lb(n);
  std::vector<std::uint8_t> ma(n), mb(n);
  for (std::size_t i = 0; i < n; ++i) {
    T ra = a[i] - lse_a;
    T rb = b[i] - lse_b;
    p[i] = std::exp(ra);
    q[i] = std::exp(rb);
    ma[i] = ra > log_eps;
    mb[i] = rb > log_eps;
    la[i] = ma[i] ? ra : log_eps;
    lb[i] = mb[i] ? rb : log_eps;
  }
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) loss += (p[i] - q[i]) * (la[i] - lb[i]);
  loss /= T(2);
  if (da.empty() && db.empty()) return loss;

  // Chain through p = softmax(a) and la = clamp(log_softmax(a)).
  auto grad = [&](const std::vector<T>& probs, const std::vector<std::uint8_t>& mask, T sign,
                  std::span<T> out) {
    if (out.empty()) return;
    T pu = 0;
    T wsum = 0;
    std::vector<T> u(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = sign * (la[i] - lb[i]) / T(2);
      w[i] = mask[i] ? sign * (p[i] - q[i]) / T(2) : T(0);
      pu += probs[i] * u[i];
      wsum += w[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      out[j] += scale * (probs[j] * (u[j] - pu) + w[j] - probs[j] * wsum);
    }
  };
  grad(p, ma, T(1), da);
  grad(q, mb, T(-1), db);
  return loss;
}

template <class T>
std::vector<T> dr_similarity_distribution(const Matrix<T>& reps, int i, T tau, SimilarityKind kind) {
  if (reps.rows() < 2) throw DataError("similarity distribution needs at least 2 users");
  auto z = dr_logits(reps, i, tau, kind);
  return softmax<T>(z);
}

template <class T>
T distribution_regularization(const Matrix<T>& reps1, const Matrix<T>& reps2, T tau,
                              SimilarityKind kind, Matrix<T>* d1, Matrix<T>* d2, T scale) {
  require_same_shape(reps1, reps2, "dr_loss");
  const Eigen::Index n = reps1.rows();
  if (n < 2) throw DataError("dr_loss needs a batch of at least 2 users");
  const bool want_grad = d1 != nullptr || d2 != nullptr;
  const T per_user = scale / static_cast<T>(n);

  // Whole-batch similarity matrices; cosine works on unit rows, and a zero
  // row has similarity 0 to everything.
  auto unit_rows = [&](const Matrix<T>& r, std::vector<T>& norms) {
    norms.assign(static_cast<std::size_t>(n), T(1));
    if (kind == SimilarityKind::kInnerProduct) return r;
    Matrix<T> u = r;
    for (Eigen::Index i = 0; i < n; ++i) {
      norms[i] = norm(row_span(r, i));
      if (norms[i] == T(0)) {
        u.row(i).setZero();
      } else {
        u.row(i) /= norms[i];
      }
    }
    return u;
  };
  std::vector<T> norms1, norms2;
  Matrix<T> u1 = unit_rows(reps1, norms1);
  Matrix<T> u2 = unit_rows(reps2, norms2);
  Matrix<T> s1 = u1 * u1.transpose();
  Matrix<T> s2 = u2 * u2.transpose();

  Matrix<T> g1, g2;
  if (want_grad) {
    g1 = Matrix<T>::Zero(n, n);
    g2 = Matrix<T>::Zero(n, n);
  }
  std::vector<T> z1(n - 1), z2(n - 1), dz1(n - 1), dz2(n - 1);
  T acc = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t slot = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      z1[slot] = s1(i, j) / tau;
      z2[slot] = s2(i, j) / tau;
      ++slot;
    }
    if (!want_grad) {
      acc += bidirectional_kl_logits<T>(z1, z2);
      continue;
    }
    std::fill(dz1.begin(), dz1.end(), T(0));
    std::fill(dz2.begin(), dz2.end(), T(0));
    acc += bidirectional_kl_logits<T>(z1, z2, dz1, dz2, per_user);
    slot = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      g1(i, j) = dz1[slot] / tau;
      g2(i, j) = dz2[slot] / tau;
      ++slot;
    }
  }
  if (want_grad) {
    // d(u_i . u_j) spreads to both rows; then undo the normalisation.
    auto back = [&](const Matrix<T>& g, const Matrix<T>& u, const std::vector<T>& norms, Matrix<T>& out) {
      Matrix<T> gs = g + g.transpose();
      Matrix<T> du = gs * u;
      if (kind == SimilarityKind::kInnerProduct) {
        out += du;
        return;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        if (norms[i] == T(0)) continue;
        T along = u.row(i).dot(du.row(i));
        out.row(i) += (du.row(i) - along * u.row(i)) / norms[i];
      }
    };
    if (d1 != nullptr) back(g1, u1, norms1, *d1);
    if (d2 != nullptr) back(g2, u2, norms2, *d2);
  }
  return acc / static_cast<T>(n);
}

template <class T>
T cosine_consistency(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>* da, Matrix<T>* db, T scale) {
  require_same_shape(a, b, "cosine consistency");
  const Eigen::Index n = a.rows();
  if (n == 0) return T(0);
  T acc = 0;
  for (Eigen::Index u = 0; u < n; ++u) {
    acc += T(1) - cosine_similarity(row_span(a, u), row_span(b, u));
    if (da != nullptr || db != nullptr) {
      similarity_backward(row_span(a, u), row_span(b, u), -scale / static_cast<T>(n),
                          SimilarityKind::kCosine,
                          da ? row_span(*da, u) : std::span<T>{}, db ? row_span(*db, u) : std::span<T>{});
    }
  }
  return acc / static_cast<T>(n);
}

template <class T>
T l2_consistency(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>* da, Matrix<T>* db, T scale) {
  require_same_shape(a, b, "l2 consistency");
  const Eigen::Index n = a.rows();
  if (n == 0) return T(0);
  const T d = static_cast<T>(a.cols());
  Matrix<T> diff = a - b;
  if (da != nullptr) *da += diff * (T(2) * scale / (d * static_cast<T>(n)));
  if (db != nullptr) *db -= diff * (T(2) * scale / (d * static_cast<T>(n)));
  return diff.squaredNorm() / (d * static_cast<T>(n));
}

template <class T>
T in_batch_contrastive(const Matrix<T>& view1, const Matrix<T>& view2, T temperature, Matrix<T>* d1,
                       Matrix<T>* d2, T scale) {
  require_same_shape(view1, view2, "in_batch_contrastive");
  const Eigen::Index n = view1.rows();
  if (n < 2) throw DataError("in_batch_contrastive needs at least 2 users");
  Matrix<T> z(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      z(i, j) = cosine_similarity(row_span(view1, i), row_span(view2, j)) / temperature;
    }
  }
  Matrix<T> zt = z.transpose();
  T loss_rows = 0;
  T loss_cols = 0;
  Matrix<T> dz = Matrix<T>::Zero(n, n);
  const T per = scale / (T(2) * static_cast<T>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = row_span(z, i);
    auto col = row_span(zt, i);
    T lse_r = log_sum_exp<T>(row);
    T lse_c = log_sum_exp<T>(col);
    loss_rows += lse_r - z(i, i);
    loss_cols += lse_c - z(i, i);
    for (Eigen::Index j = 0; j < n; ++j) {
      dz(i, j) += per * (std::exp(z(i, j) - lse_r) - (i == j ? T(1) : T(0)));
      dz(j, i) += per * (std::exp(zt(i, j) - lse_c) - (i == j ? T(1) : T(0)));
    }
  }
  if (d1 != nullptr || d2 != nullptr) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        similarity_backward(row_span(view1, i), row_span(view2, j), dz(i, j) / temperature,
                            SimilarityKind::kCosine, d1 ? row_span(*d1, i) : std::span<T>{},
                            d2 ? row_span(*d2, j) : std::span<T>{});
      }
    }
  }
  return (loss_rows + loss_cols) / (T(2) * static_cast<T>(n));
}

template <class T>
T two_positive_consistency(std::span<const std::pair<ItemId, ItemId>> pairs,
                           const Matrix<T>& item_embeddings, Matrix<T>* d_items, T scale) {
  if (pairs.empty()) return T(0);
  const T n = static_cast<T>(pairs.size());
  T acc = 0;
  for (auto [a, b] : pairs) {
    acc += T(1) - cosine_similarity(row_span(item_embeddings, a), row_span(item_embeddings, b));
    if (d_items != nullptr) {
      // Accumulate into temporaries first: a and b may be the same row.
      const auto d = static_cast<std::size_t>(item_embeddings.cols());
      std::vector<T> ga(d, T(0)), gb(d, T(0));
      similarity_backward<T>(row_span(item_embeddings, a), row_span(item_embeddings, b), -scale / n,
                             SimilarityKind::kCosine, ga, gb);
      for (std::size_t k = 0; k < d; ++k) {
        (*d_items)(a, static_cast<Eigen::Index>(k)) += ga[k];
        (*d_items)(b, static_cast<Eigen::Index>(k)) += gb[k];
      }
    }
  }
  return acc / n;
}

template <class T>
Matrix<T> final_representations(const PassOutput<T>& pass, const SequenceBatch& batch) {
  std::vector<Eigen::Index> rows;
  for (int b = 0; b < batch.batch_size; ++b) {
    int t = batch.last_valid(b);
    if (t >= 0) rows.push_back(static_cast<Eigen::Index>(b) * batch.max_len + t);
  }
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), pass.representations.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = pass.representations.row(rows[i]);
  return out;
}

namespace {

struct Step {
  int b;
  int t;
  Eigen::Index row;
};

std::vector<Step> valid_steps(const SequenceBatch& batch) {
  std::vector<Step> steps;
  for (int b = 0; b < batch.batch_size; ++b) {
    for (int t = 0; t < batch.max_len; ++t) {
      if (batch.valid(b, t)) steps.push_back({b, t, static_cast<Eigen::Index>(b) * batch.max_len + t});
    }
  }
  return steps;
}

/// [steps x (1 + n_neg)] logits; column 0 is the positive.
template <class T>
Matrix<T> candidate_logits(const PassOutput<T>& pass, const SequenceBatch& batch,
                           const NegativeSamples& negatives, const Matrix<T>& items,
                           const std::vector<Step>& steps) {
  const int c = negatives.per_step + 1;
  Matrix<T> logits(static_cast<Eigen::Index>(steps.size()), c);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    auto rep = row_span(pass.representations, steps[s].row);
    logits(s, 0) = dot(rep, row_span(items, batch.target(steps[s].b, steps[s].t)));
    auto negs = negatives.at(steps[s].b, steps[s].t);
    for (int k = 0; k < negatives.per_step; ++k) logits(s, k + 1) = dot(rep, row_span(items, negs[k]));
  }
  return logits;
}

/// Adds dlogits * dlogit/drep and dlogit/ditems.
template <class T>
void candidate_logits_backward(const Matrix<T>& d_logits, const PassOutput<T>& pass,
                               const SequenceBatch& batch, const NegativeSamples& negatives,
                               const Matrix<T>& items, const std::vector<Step>& steps,
                               Matrix<T>& d_reps, Matrix<T>& d_items) {
  const auto d = static_cast<std::size_t>(items.cols());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    auto rep = row_span(pass.representations, steps[s].row);
    auto drep = row_span(d_reps, steps[s].row);
    auto negs = negatives.at(steps[s].b, steps[s].t);
    for (Eigen::Index c = 0; c < d_logits.cols(); ++c) {
      T g = d_logits(s, c);
      if (g == T(0)) continue;
      ItemId id = c == 0 ? batch.target(steps[s].b, steps[s].t) : negs[c - 1];
      auto emb = row_span(items, id);
      auto demb = row_span(d_items, id);
      for (std::size_t k = 0; k < d; ++k) {
        drep[k] += g * emb[k];
        demb[k] += g * rep[k];
      }
    }
  }
}

/// Both passes score the same candidates, so each item row is fetched once
/// for the pair. Values match two candidate_logits calls exactly.
template <class T>
std::pair<Matrix<T>, Matrix<T>> candidate_logits_pair(const PassOutput<T>& pass1, const PassOutput<T>& pass2,
                                                      const SequenceBatch& batch,
                                                      const NegativeSamples& negatives, const Matrix<T>& items,
                                                      const std::vector<Step>& steps) {
  const int c = negatives.per_step + 1;
  Matrix<T> l1(static_cast<Eigen::Index>(steps.size()), c);
  Matrix<T> l2(static_cast<Eigen::Index>(steps.size()), c);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    auto rep1 = row_span(pass1.representations, steps[s].row);
    auto rep2 = row_span(pass2.representations, steps[s].row);
    auto negs = negatives.at(steps[s].b, steps[s].t);
    for (int k = 0; k < c; ++k) {
      auto emb = row_span(items, k == 0 ? batch.target(steps[s].b, steps[s].t) : negs[k - 1]);
      l1(s, k) = dot(rep1, emb);
      l2(s, k) = dot(rep2, emb);
    }
  }
  return {std::move(l1), std::move(l2)};
}

/// Per-pass outputs stay separate; only the traversal is shared.
template <class T>
void candidate_logits_backward_pair(const Matrix<T>& dl1, const Matrix<T>& dl2, const PassOutput<T>& pass1,
                                    const PassOutput<T>& pass2, const SequenceBatch& batch,
                                    const NegativeSamples& negatives, const Matrix<T>& items,
                                    const std::vector<Step>& steps, ObjectiveGradients<T>& g) {
  const auto d = static_cast<std::size_t>(items.cols());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    auto rep1 = row_span(pass1.representations, steps[s].row);
    auto rep2 = row_span(pass2.representations, steps[s].row);
    auto drep1 = row_span(g.d_reps1, steps[s].row);
    auto drep2 = row_span(g.d_reps2, steps[s].row);
    auto negs = negatives.at(steps[s].b, steps[s].t);
    for (Eigen::Index c = 0; c < dl1.cols(); ++c) {
      const T g1 = dl1(s, c);
      const T g2 = dl2(s, c);
      if (g1 == T(0) && g2 == T(0)) continue;
      ItemId id = c == 0 ? batch.target(steps[s].b, steps[s].t) : negs[c - 1];
      auto emb = row_span(items, id);
      if (g1 != T(0)) {
        auto demb = row_span(g.d_items1, id);
        for (std::size_t k = 0; k < d; ++k) {
          drep1[k] += g1 * emb[k];
          demb[k] += g1 * rep1[k];
        }
      }
      if (g2 != T(0)) {
        auto demb = row_span(g.d_items2, id);
        for (std::size_t k = 0; k < d; ++k) {
          drep2[k] += g2 * emb[k];
          demb[k] += g2 * rep2[k];
        }
      }
    }
  }
}

/// Row-wise log-softmax and softmax of a logit matrix, computed once per pass
/// and shared by the basic and RD terms.
template <class T>
struct CandidateDistribution {
  Matrix<T> log_probs;
  Matrix<T> probs;
};

template <class T>
CandidateDistribution<T> candidate_distribution(const Matrix<T>& logits) {
  CandidateDistribution<T> out{Matrix<T>(logits.rows(), logits.cols()), Matrix<T>(logits.rows(), logits.cols())};
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    auto row = row_span(logits, s);
    T lse = log_sum_exp(row);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      T r = row[c] - lse;
      out.log_probs(s, c) = r;
      out.probs(s, c) = std::exp(r);
    }
  }
  return out;
}

template <class T>
T basic_from_distribution(const CandidateDistribution<T>& dist, Matrix<T>* d_logits, T scale) {
  T acc = 0;
  for (Eigen::Index s = 0; s < dist.log_probs.rows(); ++s) {
    acc -= dist.log_probs(s, 0);
    if (d_logits != nullptr) {
      for (Eigen::Index c = 0; c < dist.probs.cols(); ++c) {
        (*d_logits)(s, c) += scale * (dist.probs(s, c) - (c == 0 ? T(1) : T(0)));
      }
    }
  }
  return acc;
}

/// Same value and gradient as bidirectional_kl_logits, row by row, without
/// per-row allocation.
template <class T>
double rd_from_distributions(const CandidateDistribution<T>& d1, const CandidateDistribution<T>& d2,
                        Matrix<T>* dl1, Matrix<T>* dl2, T scale) {
  const T log_eps = std::log(static_cast<T>(kLogEps));
  const Eigen::Index n = d1.probs.cols();
  double total = 0.0;
  for (Eigen::Index s = 0; s < d1.probs.rows(); ++s) {
    const T* p = &d1.probs(s, 0);
    const T* q = &d2.probs(s, 0);
    const T* ra = &d1.log_probs(s, 0);
    const T* rb = &d2.log_probs(s, 0);
    T loss = 0;
    T pu = 0, qu = 0, wa = 0, wb = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const T la = ra[i] > log_eps ? ra[i] : log_eps;
      const T lb = rb[i] > log_eps ? rb[i] : log_eps;
      const T u = (la - lb) / T(2);
      loss += (p[i] - q[i]) * (la - lb);
      pu += p[i] * u;
      qu += q[i] * u;
      if (ra[i] > log_eps) wa += (p[i] - q[i]) / T(2);
      if (rb[i] > log_eps) wb += (p[i] - q[i]) / T(2);
    }
    total += loss / T(2);
    if (dl1 == nullptr) continue;
    T* ga = &(*dl1)(s, 0);
    T* gb = &(*dl2)(s, 0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const T la = ra[j] > log_eps ? ra[j] : log_eps;
      const T lb = rb[j] > log_eps ? rb[j] : log_eps;
      const T u = (la - lb) / T(2);
      const T half = (p[j] - q[j]) / T(2);
      const T w1 = ra[j] > log_eps ? half : T(0);
      const T w2 = rb[j] > log_eps ? -half : T(0);
      ga[j] += scale * (p[j] * (u - pu) + w1 - p[j] * wa);
      gb[j] += scale * (q[j] * (-u + qu) + w2 + q[j] * wb);
    }
  }
  return total;
}

/// Gathers rows at the listed indices.
template <class T>
Matrix<T> gather_rows(const Matrix<T>& m, const std::vector<Eigen::Index>& rows) {
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

template <class T>
void scatter_rows(const Matrix<T>& src, const std::vector<Eigen::Index>& rows, Matrix<T>& dst) {
  for (std::size_t i = 0; i < rows.size(); ++i) dst.row(rows[i]) += src.row(i);
}

/// Row groups compared by the representation-space terms: the final valid
/// step of every user, or (all-positions mode) the users valid at each step.
std::vector<std::vector<Eigen::Index>> representation_groups(const SequenceBatch& batch,
                                                             bool all_positions) {
  std::vector<std::vector<Eigen::Index>> groups;
  if (!all_positions) {
    std::vector<Eigen::Index> rows;
    for (int b = 0; b < batch.batch_size; ++b) {
      int t = batch.last_valid(b);
      if (t >= 0) rows.push_back(static_cast<Eigen::Index>(b) * batch.max_len + t);
    }
    groups.push_back(std::move(rows));
    return groups;
  }
  for (int t = 0; t < batch.max_len; ++t) {
    std::vector<Eigen::Index> rows;
    for (int b = 0; b < batch.batch_size; ++b) {
      if (batch.valid(b, t)) rows.push_back(static_cast<Eigen::Index>(b) * batch.max_len + t);
    }
    if (rows.size() >= 2) groups.push_back(std::move(rows));
  }
  return groups;
}

template <class T>
T dr_over_groups(const PassOutput<T>& p1, const PassOutput<T>& p2, const SequenceBatch& batch,
                 T tau, SimilarityKind kind, bool all_positions, ObjectiveGradients<T>* grads, T scale) {
  auto groups = representation_groups(batch, all_positions);
  std::size_t total_users = 0;
  for (const auto& g : groups) total_users += g.size();
  if (groups.empty() || total_users < 2) throw DataError("dr_loss needs a batch of at least 2 users");
  T acc = 0;
  for (const auto& rows : groups) {
    Matrix<T> r1 = gather_rows(p1.representations, rows);
    Matrix<T> r2 = gather_rows(p2.representations, rows);
    // Each group's mean is weighted by its share of the users.
    T weight = static_cast<T>(rows.size()) / static_cast<T>(total_users);
    if (grads != nullptr) {
      Matrix<T> g1 = Matrix<T>::Zero(r1.rows(), r1.cols());
      Matrix<T> g2 = Matrix<T>::Zero(r2.rows(), r2.cols());
      acc += weight * distribution_regularization<T>(r1, r2, tau, kind, &g1, &g2, scale * weight);
      scatter_rows(g1, rows, grads->d_reps1);
      scatter_rows(g2, rows, grads->d_reps2);
    } else {
      acc += weight * distribution_regularization<T>(r1, r2, tau, kind);
    }
  }
  return acc;
}

}  // namespace

template <class T>
LossBreakdown evaluate_terms(const ObjectiveInputs<T>& in, const LossWeights& weights,
                             const TermScales& scales, ObjectiveGradients<T>* grads) {
  const auto& batch = *in.batch;
  const auto& items = in.params->item_embeddings;
  const bool two_pass = in.pass2 != nullptr;
  if (!two_pass && (scales.rd != 0.0 || scales.dr != 0.0 || scales.aux != 0.0 || scales.contrastive != 0.0)) {
    throw ConfigError("consistency terms need two forward passes");
  }
  for (const auto* pass : {in.pass1, in.pass2}) {
    if (pass == nullptr) continue;
    if (pass->batch_size != batch.batch_size || pass->max_len != batch.max_len) {
      throw DataError("pass output shape does not match the batch");
    }
  }
  if (grads != nullptr) {
    const auto& reps = in.pass1->representations;
    grads->d_reps1 = Matrix<T>::Zero(reps.rows(), reps.cols());
    grads->d_items1 = Matrix<T>::Zero(items.rows(), items.cols());
    if (two_pass) {
      grads->d_reps2 = Matrix<T>::Zero(reps.rows(), reps.cols());
      grads->d_items2 = Matrix<T>::Zero(items.rows(), items.cols());
    }
  }

  LossBreakdown out;
  const auto steps = valid_steps(batch);
  const bool need_logits = (scales.basic != 0.0 || scales.rd != 0.0) && !steps.empty();
  if (need_logits) {
    const auto n_steps = static_cast<double>(steps.size());
    const double pass_weight = two_pass ? 0.5 : 1.0;
    Matrix<T> logits1, logits2;
    if (two_pass) {
      std::tie(logits1, logits2) = candidate_logits_pair(*in.pass1, *in.pass2, batch, *in.negatives, items, steps);
    } else {
      logits1 = candidate_logits(*in.pass1, batch, *in.negatives, items, steps);
    }
    Matrix<T> dl1, dl2;
    if (grads != nullptr) {
      dl1 = Matrix<T>::Zero(logits1.rows(), logits1.cols());
      if (two_pass) dl2 = Matrix<T>::Zero(logits2.rows(), logits2.cols());
    }
    CandidateDistribution<T> dist1 = candidate_distribution(logits1);
    CandidateDistribution<T> dist2;
    if (two_pass) dist2 = candidate_distribution(logits2);
    if (scales.basic != 0.0) {
      const T s = static_cast<T>(scales.basic * pass_weight / n_steps);
      double sum = basic_from_distribution(dist1, grads ? &dl1 : nullptr, s);
      if (two_pass) sum += basic_from_distribution(dist2, grads ? &dl2 : nullptr, s);
      out.basic = sum * pass_weight / n_steps;
    }
    if (scales.rd != 0.0) {
      const T s = static_cast<T>(scales.rd / n_steps);
      out.rd = rd_from_distributions(dist1, dist2, grads ? &dl1 : nullptr, grads ? &dl2 : nullptr, s) / n_steps;
    }
    if (grads != nullptr) {
      if (two_pass) {
        candidate_logits_backward_pair(dl1, dl2, *in.pass1, *in.pass2, batch, *in.negatives, items, steps,
                                       *grads);
      } else {
        candidate_logits_backward(dl1, *in.pass1, batch, *in.negatives, items, steps, grads->d_reps1,
                                  grads->d_items1);
      }
    }
  }

  const T tau = static_cast<T>(weights.dr_temperature);
  if (scales.dr != 0.0) {
    out.dr = dr_over_groups(*in.pass1, *in.pass2, batch, tau, weights.dr_similarity,
                            weights.dr_all_positions, grads, static_cast<T>(scales.dr));
  }
  if (scales.aux != 0.0) {
    const T s = static_cast<T>(scales.aux);
    if (weights.aux_mode == AuxMode::kRepKl) {
      out.aux = dr_over_groups(*in.pass1, *in.pass2, batch, tau, weights.dr_similarity,
                               weights.dr_all_positions, grads, s);
    } else {
      auto rows = representation_groups(batch, false).front();
      Matrix<T> r1 = gather_rows(in.pass1->representations, rows);
      Matrix<T> r2 = gather_rows(in.pass2->representations, rows);
      Matrix<T> g1, g2;
      if (grads != nullptr) {
        g1 = Matrix<T>::Zero(r1.rows(), r1.cols());
        g2 = Matrix<T>::Zero(r2.rows(), r2.cols());
      }
      out.aux = weights.aux_mode == AuxMode::kCosine
                    ? cosine_consistency<T>(r1, r2, grads ? &g1 : nullptr, grads ? &g2 : nullptr, s)
                    : l2_consistency<T>(r1, r2, grads ? &g1 : nullptr, grads ? &g2 : nullptr, s);
      if (grads != nullptr) {
        scatter_rows(g1, rows, grads->d_reps1);
        scatter_rows(g2, rows, grads->d_reps2);
      }
    }
  }
  if (scales.contrastive != 0.0) {
    auto rows = representation_groups(batch, false).front();
    Matrix<T> r1 = gather_rows(in.pass1->representations, rows);
    Matrix<T> r2 = gather_rows(in.pass2->representations, rows);
    Matrix<T> g1, g2;
    if (grads != nullptr) {
      g1 = Matrix<T>::Zero(r1.rows(), r1.cols());
      g2 = Matrix<T>::Zero(r2.rows(), r2.cols());
    }
    out.contrastive = in_batch_contrastive<T>(r1, r2, static_cast<T>(weights.contrastive_temperature),
                                              grads ? &g1 : nullptr, grads ? &g2 : nullptr,
                                              static_cast<T>(scales.contrastive));
    if (grads != nullptr) {
      scatter_rows(g1, rows, grads->d_reps1);
      scatter_rows(g2, rows, grads->d_reps2);
    }
  }
  if (scales.two_pos != 0.0) {
    out.two_pos = two_positive_consistency<T>(in.positives, items, grads ? &grads->d_items1 : nullptr,
                                              static_cast<T>(scales.two_pos));
  }
  out.total = scales.basic * out.basic + scales.rd * out.rd + scales.dr * out.dr +
              scales.aux * out.aux + scales.two_pos * out.two_pos +
              scales.contrastive * out.contrastive;
  return out;
}

template <class T>
LossBreakdown total_loss(const ObjectiveInputs<T>& in, const LossWeights& weights,
                         ObjectiveGradients<T>* grads) {
  return evaluate_terms(in, weights, TermScales::from(weights), grads);
}

template <class T>
T basic_loss_two_pass(const PassOutput<T>& pass1, const PassOutput<T>& pass2,
                      const SequenceBatch& batch, const NegativeSamples& negatives,
                      const ParameterSet<T>& params) {
  ObjectiveInputs<T> in{&pass1, &pass2, &batch, &negatives, &params, {}};
  TermScales only{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  return static_cast<T>(evaluate_terms(in, LossWeights{}, only).basic);
}

template <class T>
T rd_loss(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch,
          const NegativeSamples& negatives, const ParameterSet<T>& params) {
  ObjectiveInputs<T> in{&pass1, &pass2, &batch, &negatives, &params, {}};
  TermScales only{0.0, 1.0, 0.0, 0.0, 0.0, 0.0};
  return static_cast<T>(evaluate_terms(in, LossWeights{}, only).rd);
}

template <class T>
T dr_loss(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch, T tau) {
  return dr_over_groups<T>(pass1, pass2, batch, tau, SimilarityKind::kCosine, false, nullptr, T(1));
}

template <class T>
T aux_cosine(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch) {
  return cosine_consistency<T>(final_representations(pass1, batch), final_representations(pass2, batch));
}

template <class T>
T aux_l2(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch) {
  return l2_consistency<T>(final_representations(pass1, batch), final_representations(pass2, batch));
}

template <class T>
T aux_rep_kl(const PassOutput<T>& pass1, const PassOutput<T>& pass2, const SequenceBatch& batch, T tau) {
  return dr_loss(pass1, pass2, batch, tau);
}

#define CT4REC_INSTANTIATE_OBJECTIVES(T)                                                          \
  template T log_sum_exp<T>(std::span<const T>);                                                   \
  template std::vector<T> softmax<T>(std::span<const T>);                                          \
  template T cosine_similarity<T>(std::span<const T>, std::span<const T>);                         \
  template T sampled_softmax_loss<T>(std::span<const T>, ItemId, std::span<const ItemId>,          \
                                     const Matrix<T>&, std::span<T>, Matrix<T>*, T);               \
  template T bidirectional_kl<T>(std::span<const T>, std::span<const T>);                          \
  template T bidirectional_kl_logits<T>(std::span<const T>, std::span<const T>, std::span<T>,      \
                                        std::span<T>, T);                                          \
  template std::vector<T> dr_similarity_distribution<T>(const Matrix<T>&, int, T, SimilarityKind); \
  template T distribution_regularization<T>(const Matrix<T>&, const Matrix<T>&, T, SimilarityKind, \
                                            Matrix<T>*, Matrix<T>*, T);                            \
  template T cosine_consistency<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, Matrix<T>*, T); \
  template T l2_consistency<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, Matrix<T>*, T);     \
  template T in_batch_contrastive<T>(const Matrix<T>&, const Matrix<T>&, T, Matrix<T>*,            \
                                     Matrix<T>*, T);                                               \
  template T two_positive_consistency<T>(std::span<const std::pair<ItemId, ItemId>>,               \
                                         const Matrix<T>&, Matrix<T>*, T);                         \
  template Matrix<T> final_representations<T>(const PassOutput<T>&, const SequenceBatch&);         \
  template LossBreakdown total_loss<T>(const ObjectiveInputs<T>&, const LossWeights&,              \
                                       ObjectiveGradients<T>*);                                    \
  template LossBreakdown evaluate_terms<T>(const ObjectiveInputs<T>&, const LossWeights&,          \
                                           const TermScales&, ObjectiveGradients<T>*);             \
  template T basic_loss_two_pass<T>(const PassOutput<T>&, const PassOutput<T>&,                    \
                                    const SequenceBatch&, const NegativeSamples&,                  \
                                    const ParameterSet<T>&);                                       \
  template T rd_loss<T>(const PassOutput<T>&, const PassOutput<T>&, const SequenceBatch&,          \
                        const NegativeSamples&, const ParameterSet<T>&);                           \
  template T dr_loss<T>(const PassOutput<T>&, const PassOutput<T>&, const SequenceBatch&, T);      \
  template T aux_cosine<T>(const PassOutput<T>&, const PassOutput<T>&, const SequenceBatch&);      \
  template T aux_l2<T>(const PassOutput<T>&, const PassOutput<T>&, const SequenceBatch&);          \
  template T aux_rep_kl<T>(const PassOutput<T>&, const PassOutput<T>&, const SequenceBatch&, T);

CT4REC_INSTANTIATE_OBJECTIVES(float)
CT4REC_INSTANTIATE_OBJECTIVES(double)

}  // namespace ct4rec
