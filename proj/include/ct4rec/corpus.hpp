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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace ct4rec {

using ItemId = std::int32_t;
using UserId = std::int32_t;

inline constexpr ItemId kPaddingItem = 0;

/// Token used by the mask augmentation. It occupies embedding row
/// catalog_size + 1 and is never a ranking candidate.
constexpr ItemId mask_token(int catalog_size) { return static_cast<ItemId>(catalog_size + 1); }

enum class InputFormat { kTsvTriples, kSequenceLines };

InputFormat parse_input_format(std::string_view name);
std::string_view to_string(InputFormat format);

struct InteractionRecord {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
};

/// Interactions after dense id remapping. Users are numbered [0, |U|) and
/// items [1, |V|] in order of first appearance among retained records.
struct InteractionLog {
  std::vector<InteractionRecord> records;  // file order
  std::vector<std::string> user_raw_ids;   // dense user -> raw
  std::vector<std::string> item_raw_ids;   // index 0 unused, dense item -> raw
  std::unordered_map<std::string, UserId> user_map;
  std::unordered_map<std::string, ItemId> item_map;

  int num_users() const { return static_cast<int>(user_raw_ids.size()); }
  int num_items() const { return static_cast<int>(item_raw_ids.size()) - 1; }
};

struct UserSequence {
  UserId user = 0;
  std::vector<ItemId> items;

  friend bool operator==(const UserSequence&, const UserSequence&) = default;
};

struct TestPair {
  UserSequence history;
  ItemId held_out = kPaddingItem;
};

/// Parses one of the two interaction formats:
///   tsv-triples     user<TAB>item<TAB>timestamp
///   sequence-lines  user item1 item2 ...   (already chronological)
/// Users with fewer than `min_interactions` records are dropped in a single
/// pass (no iterative k-core).
InteractionLog ingest(std::istream& in, InputFormat format, int min_interactions);
InteractionLog ingest(const std::filesystem::path& path, InputFormat format, int min_interactions);

/// Per-user chronological sequences, ordered by dense user id. Timestamp
/// ties keep file order.
std::vector<UserSequence> build_sequences(const InteractionLog& log);

struct SplitResult {
  std::vector<UserSequence> train;
  std::vector<TestPair> test;
  std::size_t excluded = 0;  // users with a single interaction
};

/// Leave-one-out: the last item of each sequence is held out and the rest
/// becomes the training sequence.
SplitResult split(std::vector<UserSequence> sequences);
SplitResult split(const InteractionLog& log);

/// Fixed-shape training or inference batch. Rows are left-padded with 0.
struct SequenceBatch {
  int batch_size = 0;
  int max_len = 0;
  std::vector<ItemId> inputs;    // [B * L]
  std::vector<ItemId> targets;   // [B * L], 0 where invalid
  std::vector<std::uint8_t> valid_mask;  // [B * L]
  std::vector<UserId> users;     // [B]

  std::size_t index(int b, int t) const { return static_cast<std::size_t>(b) * max_len + t; }
  ItemId input(int b, int t) const { return inputs[index(b, t)]; }
  ItemId target(int b, int t) const { return targets[index(b, t)]; }
  bool valid(int b, int t) const { return valid_mask[index(b, t)] != 0; }
  int num_valid() const;
  /// Last position with a valid target, or -1 if the row has none.
  int last_valid(int b) const;
  /// Items of row b in chronological order: the non-padding inputs followed
  /// by the final target.
  UserSequence row_sequence(int b) const;
};

/// Training layout: inputs are s[0..n-2] and targets s[1..n-1], truncated to
/// the most recent max_len steps.
SequenceBatch make_batch(std::span<const UserSequence> sequences, std::span<const std::size_t> order,
                         int max_len);

/// Inference layout: inputs are the last max_len items of each sequence with
/// no targets. The representation at position max_len - 1 predicts the next
/// item.
SequenceBatch make_inference_batch(std::span<const UserSequence> sequences, int max_len);

/// Shuffles with `seed` and cuts into batches. Every sequence appears exactly
/// once; a trailing batch of one is merged into its predecessor so that every
/// batch holds at least two users.
std::vector<SequenceBatch> make_batches(std::span<const UserSequence> sequences, int batch_size,
                                        int max_len, std::uint64_t seed);

/// Negative ids for every step, laid out [B][L][n_neg]. Invalid steps are 0.
struct NegativeSamples {
  int batch_size = 0;
  int max_len = 0;
  int per_step = 0;
  std::vector<ItemId> ids;

  std::span<const ItemId> at(int b, int t) const {
    return {ids.data() + (static_cast<std::size_t>(b) * max_len + t) * per_step,
            static_cast<std::size_t>(per_step)};
  }
};

/// Uniform over [1, catalog_size] with resampling only on collision with the
/// step's positive.
NegativeSamples sample_train_negatives(const SequenceBatch& batch, int n_neg, int catalog_size,
                                       std::uint64_t seed);

/// `count` distinct items uniform over the catalog minus the held-out item
/// (and minus the user's history when `exclude_history`). The stream is
/// derived from (seed, user id), so results do not depend on evaluation order.
std::vector<ItemId> sample_eval_negatives(const UserSequence& user, ItemId held_out, int count,
                                          int catalog_size, std::uint64_t seed,
                                          bool exclude_history = false);

UserSequence augment_mask(const UserSequence& seq, double ratio, ItemId mask, std::uint64_t seed);
UserSequence augment_reorder(const UserSequence& seq, double ratio, std::uint64_t seed);

enum class AugmentKind { kMask, kReorder };

/// Applies an augmentation to the input items of every row. Targets, the
/// validity mask and the padding layout are left unchanged.
SequenceBatch augment_batch(const SequenceBatch& batch, AugmentKind kind, double ratio,
                            ItemId mask, std::uint64_t seed);

/// Two items at distinct positions of `seq`, uniformly over position pairs.
std::pair<ItemId, ItemId> sample_two_positives(const UserSequence& seq, std::uint64_t seed);

struct DatasetManifest {
  int users = 0;
  int items = 0;
  std::int64_t actions = 0;
  double avg_actions = 0.0;
  double density = 0.0;
};

DatasetManifest describe(const InteractionLog& log);
nlohmann::json to_json(const DatasetManifest& manifest);

/// Writes dense sequences in sequence-lines format.
void write_sequences(const std::filesystem::path& path, std::span<const UserSequence> sequences);

}  // namespace ct4rec
