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
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct4rec/corpus.hpp"
#include "ct4rec/encoder.hpp"

namespace ct4rec {

/// Sampled-negative leave-one-out protocol. negatives <= 0 ranks the target
/// against the whole catalog.
struct EvalProtocol {
  int negatives = 500;
  std::uint64_t seed = 0;
  std::vector<int> ks{1, 5, 10, 20};
  bool exclude_history = false;
  int batch_size = 256;
};

struct EvalReport {
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  std::size_t n_users = 0;
  int negatives = 0;
  std::uint64_t seed = 0;
  std::string tie_rule = "pessimistic";

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Aligned text table with one HR@k and one NDCG@k row per k.
  std::string to_table() const;
};

/// 1 + number of negatives scoring at least as high as the target.
template <class T>
int rank_of_target(std::span<const T> representation, ItemId target,
                   std::span<const ItemId> negatives, const ParameterSet<T>& params);

struct RankMetrics {
  int hit = 0;
  double ndcg = 0.0;
};

RankMetrics metrics_from_rank(int rank, int k);

/// Evaluation-mode representation at the final step of each sequence,
/// computed in chunks of `batch_size` rows.
template <class T>
Matrix<T> encode_final(const ParameterSet<T>& params, const EncoderConfig& config,
                       std::span<const UserSequence> sequences, int batch_size = 256);

struct UserRank {
  UserId user = 0;
  int rank = 0;
  int candidates = 0;
};

/// Per-user ranks, ordered by user id regardless of the input order.
template <class T>
std::vector<UserRank> rank_users(const ParameterSet<T>& params, const EncoderConfig& config,
                                 std::span<const TestPair> pairs, const EvalProtocol& protocol);

EvalReport aggregate(std::span<const UserRank> ranks, const EvalProtocol& protocol, int negatives);

template <class T>
EvalReport evaluate(const ParameterSet<T>& params, const EncoderConfig& config,
                    std::span<const TestPair> pairs, const EvalProtocol& protocol);

}  // namespace ct4rec
