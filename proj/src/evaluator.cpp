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

#include "ct4rec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ct4rec/error.hpp"

namespace ct4rec {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json h = nlohmann::json::object();
  nlohmann::json n = nlohmann::json::object();
  for (const auto& [k, v] : hr) h[std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg) n[std::to_string(k)] = v;
  return nlohmann::json{{"hr", h},          {"ndcg", n},    {"n_users", n_users},
                        {"negatives", negatives}, {"seed", seed}, {"tie_rule", tie_rule}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& [k, v] : j.at("hr").items()) r.hr[std::stoi(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("ndcg").items()) r.ndcg[std::stoi(k)] = v.get<double>();
  r.n_users = j.at("n_users").get<std::size_t>();
  r.negatives = j.at("negatives").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.tie_rule = j.at("tie_rule").get<std::string>();
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "users=" << n_users << " negatives=" << negatives << " seed=" << seed
     << " ties=" << tie_rule << '\n';
  os << std::left << std::setw(10) << "metric" << std::right << std::setw(10) << "value" << '\n';
  for (const auto& [k, v] : hr) {
    os << std::left << std::setw(10) << ("HR@" + std::to_string(k)) << std::right << std::setw(10)
       << std::fixed << std::setprecision(4) << v << '\n';
    os << std::left << std::setw(10) << ("NDCG@" + std::to_string(k)) << std::right << std::setw(10)
       << std::fixed << std::setprecision(4) << ndcg.at(k) << '\n';
  }
  return os.str();
}

template <class T>
int rank_of_target(std::span<const T> representation, ItemId target,
                   std::span<const ItemId> negatives, const ParameterSet<T>& params) {
  const T target_score = dot(representation, row_span(params.item_embeddings, target));
  int rank = 1;
  for (ItemId v : negatives) {
    if (dot(representation, row_span(params.item_embeddings, v)) >= target_score) ++rank;
  }
  return rank;
}

RankMetrics metrics_from_rank(int rank, int k) {
  if (rank < 1 || k < 1) throw ConfigError("rank and k must be >= 1");
  if (rank > k) return {0, 0.0};
  return {1, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

template <class T>
Matrix<T> encode_final(const ParameterSet<T>& params, const EncoderConfig& config,
                       std::span<const UserSequence> sequences, int batch_size) {
  const int L = config.max_seq_len;
  Matrix<T> out(static_cast<Eigen::Index>(sequences.size()), config.embed_dim);
  batch_size = std::max(1, batch_size);
  for (std::size_t lo = 0; lo < sequences.size(); lo += batch_size) {
    std::size_t hi = std::min(sequences.size(), lo + static_cast<std::size_t>(batch_size));
    SequenceBatch batch = make_inference_batch(sequences.subspan(lo, hi - lo), L);
    PassOutput<T> pass = forward(params, config, batch, std::nullopt);
    for (std::size_t b = 0; b < hi - lo; ++b) {
      out.row(static_cast<Eigen::Index>(lo + b)) =
          pass.representations.row(static_cast<Eigen::Index>(b) * L + (L - 1));
    }
  }
  return out;
}

template <class T>
std::vector<UserRank> rank_users(const ParameterSet<T>& params, const EncoderConfig& config,
                                 std::span<const TestPair> pairs, const EvalProtocol& protocol) {
  if (pairs.empty()) throw DataError("evaluation set is empty");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].history.user < pairs[b].history.user;
  });
  std::vector<UserSequence> histories;
  histories.reserve(pairs.size());
  for (std::size_t i : order) histories.push_back(pairs[i].history);
  Matrix<T> reps = encode_final(params, config, std::span<const UserSequence>(histories), protocol.batch_size);

  const int catalog = params.catalog_size();
  std::vector<UserRank> ranks;
  ranks.reserve(pairs.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const TestPair& pair = pairs[order[r]];
    int count = protocol.negatives;
    if (count <= 0) {
      std::size_t excluded = 1;
      if (protocol.exclude_history) {
        std::vector<ItemId> h = pair.history.items;
        std::sort(h.begin(), h.end());
        h.erase(std::unique(h.begin(), h.end()), h.end());
        excluded += static_cast<std::size_t>(
            std::count_if(h.begin(), h.end(), [&](ItemId v) { return v != pair.held_out && v >= 1 && v <= catalog; }));
      }
      count = catalog - static_cast<int>(excluded);
    }
    auto negatives = sample_eval_negatives(pair.history, pair.held_out, count, catalog, protocol.seed,
                                           protocol.exclude_history);
    int rank = rank_of_target<T>(row_span(reps, static_cast<Eigen::Index>(r)), pair.held_out, negatives, params);
    ranks.push_back({pair.history.user, rank, count + 1});
  }
  return ranks;
}

EvalReport aggregate(std::span<const UserRank> ranks, const EvalProtocol& protocol, int negatives) {
  if (ranks.empty()) throw DataError("evaluation set is empty");
  EvalReport report;
  report.n_users = ranks.size();
  report.negatives = negatives;
  report.seed = protocol.seed;
  for (int k : protocol.ks) {
    long hits = 0;
    double ndcg = 0.0;
    for (const auto& r : ranks) {
      RankMetrics m = metrics_from_rank(r.rank, k);
      hits += m.hit;
      ndcg += m.ndcg;
    }
    report.hr[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
    report.ndcg[k] = ndcg / static_cast<double>(ranks.size());
  }
  return report;
}

template <class T>
EvalReport evaluate(const ParameterSet<T>& params, const EncoderConfig& config,
                    std::span<const TestPair> pairs, const EvalProtocol& protocol) {
  auto ranks = rank_users(params, config, pairs, protocol);
  int negatives = protocol.negatives > 0 ? protocol.negatives : ranks.front().candidates - 1;
  return aggregate(ranks, protocol, negatives);
}

#define CT4REC_INSTANTIATE_EVALUATOR(T)                                                           \
  template int rank_of_target<T>(std::span<const T>, ItemId, std::span<const ItemId>,             \
                                 const ParameterSet<T>&);                                          \
  template Matrix<T> encode_final<T>(const ParameterSet<T>&, const EncoderConfig&,                \
                                     std::span<const UserSequence>, int);                          \
  template std::vector<UserRank> rank_users<T>(const ParameterSet<T>&, const EncoderConfig&,      \
                                               std::span<const TestPair>, const EvalProtocol&);    \
  template EvalReport evaluate<T>(const ParameterSet<T>&, const EncoderConfig&,                   \
                                  std::span<const TestPair>, const EvalProtocol&);

CT4REC_INSTANTIATE_EVALUATOR(float)
CT4REC_INSTANTIATE_EVALUATOR(double)

}  // namespace ct4rec
