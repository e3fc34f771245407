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

#include "ct4rec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ct4rec/error.hpp"
#include "ct4rec/rng.hpp"

namespace ct4rec {

namespace {

struct RawRecord {
  std::string user;
  std::string item;
  std::int64_t timestamp;
};

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

double clamp_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("augmentation ratio must be in [0, 1), got " + std::to_string(ratio));
  }
  return ratio;
}

std::size_t floor_count(double ratio, std::size_t len) {
  // Guard against 0.3 * 10 landing just below 3.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(len) + 1e-9));
}

}  // namespace

InputFormat parse_input_format(std::string_view name) {
  if (name == "tsv-triples") return InputFormat::kTsvTriples;
  if (name == "sequence-lines") return InputFormat::kSequenceLines;
  throw ConfigError("unknown dataset format '" + std::string(name) +
                    "' (expected tsv-triples or sequence-lines)");
}

std::string_view to_string(InputFormat format) {
  return format == InputFormat::kTsvTriples ? "tsv-triples" : "sequence-lines";
}

InteractionLog ingest(std::istream& in, InputFormat format, int min_interactions) {
  std::vector<RawRecord> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == InputFormat::kTsvTriples) {
      auto fields = split_fields(line, '\t');
      if (fields.size() != 3) malformed(line_no, "expected user<TAB>item<TAB>timestamp");
      if (fields[0].empty() || fields[1].empty()) malformed(line_no, "empty user or item id");
      std::int64_t ts = 0;
      auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ts);
      if (ec != std::errc() || ptr != fields[2].data() + fields[2].size()) {
        malformed(line_no, "timestamp is not an integer");
      }
      raw.push_back({std::string(fields[0]), std::string(fields[1]), ts});
    } else {
      auto fields = split_whitespace(line);
      if (fields.size() < 2) malformed(line_no, "expected user followed by at least one item");
      for (std::size_t k = 1; k < fields.size(); ++k) {
        // File order is chronological; the running line index keeps ties stable.
        raw.push_back({std::string(fields[0]), std::string(fields[k]),
                       static_cast<std::int64_t>(raw.size())});
      }
    }
  }

  std::unordered_map<std::string, int> counts;
  for (const auto& r : raw) ++counts[r.user];

  InteractionLog log;
  log.item_raw_ids.emplace_back();  // padding slot
  for (const auto& r : raw) {
    if (counts[r.user] < min_interactions) continue;
    auto [uit, new_user] = log.user_map.try_emplace(r.user, static_cast<UserId>(log.user_raw_ids.size()));
    if (new_user) log.user_raw_ids.push_back(r.user);
    auto [iit, new_item] = log.item_map.try_emplace(r.item, static_cast<ItemId>(log.item_raw_ids.size()));
    if (new_item) log.item_raw_ids.push_back(r.item);
    log.records.push_back({uit->second, iit->second, r.timestamp});
  }
  if (log.records.empty()) {
    throw DataError("no interactions left after filtering users with fewer than " +
                    std::to_string(min_interactions) + " interactions");
  }
  return log;
}

InteractionLog ingest(const std::filesystem::path& path, InputFormat format, int min_interactions) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  try {
    return ingest(in, format, min_interactions);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<UserSequence> build_sequences(const InteractionLog& log) {
  std::vector<std::vector<const InteractionRecord*>> per_user(log.num_users());
  for (const auto& r : log.records) per_user[r.user].push_back(&r);
  std::vector<UserSequence> out;
  out.reserve(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& recs = per_user[u];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const auto* a, const auto* b) { return a->timestamp < b->timestamp; });
    UserSequence seq{static_cast<UserId>(u), {}};
    seq.items.reserve(recs.size());
    for (const auto* r : recs) seq.items.push_back(r->item);
    out.push_back(std::move(seq));
  }
  return out;
}

SplitResult split(std::vector<UserSequence> sequences) {
  SplitResult result;
  for (auto& seq : sequences) {
    if (seq.items.size() < 2) {
      ++result.excluded;
      continue;
    }
    ItemId last = seq.items.back();
    seq.items.pop_back();
    result.test.push_back({seq, last});
    result.train.push_back(std::move(seq));
  }
  return result;
}

SplitResult split(const InteractionLog& log) { return split(build_sequences(log)); }

int SequenceBatch::num_valid() const {
  return static_cast<int>(std::count(valid_mask.begin(), valid_mask.end(), std::uint8_t{1}));
}

int SequenceBatch::last_valid(int b) const {
  for (int t = max_len - 1; t >= 0; --t) {
    if (valid(b, t)) return t;
  }
  return -1;
}

UserSequence SequenceBatch::row_sequence(int b) const {
  UserSequence seq{users[b], {}};
  for (int t = 0; t < max_len; ++t) {
    if (input(b, t) != kPaddingItem) seq.items.push_back(input(b, t));
  }
  int last = last_valid(b);
  if (last >= 0) seq.items.push_back(target(b, last));
  return seq;
}

namespace {

SequenceBatch empty_batch(std::size_t rows, int max_len) {
  if (max_len < 1) throw ConfigError("max_seq_len must be >= 1");
  SequenceBatch batch;
  batch.batch_size = static_cast<int>(rows);
  batch.max_len = max_len;
  std::size_t cells = rows * static_cast<std::size_t>(max_len);
  batch.inputs.assign(cells, kPaddingItem);
  batch.targets.assign(cells, kPaddingItem);
  batch.valid_mask.assign(cells, 0);
  batch.users.reserve(rows);
  return batch;
}

}  // namespace

SequenceBatch make_batch(std::span<const UserSequence> sequences, std::span<const std::size_t> order,
                         int max_len) {
  SequenceBatch batch = empty_batch(order.size(), max_len);
  for (std::size_t b = 0; b < order.size(); ++b) {
    const auto& items = sequences[order[b]].items;
    batch.users.push_back(sequences[order[b]].user);
    if (items.size() < 2) continue;
    std::size_t window = std::min(items.size(), static_cast<std::size_t>(max_len) + 1);
    std::size_t first = items.size() - window;
    std::size_t steps = window - 1;
    std::size_t offset = static_cast<std::size_t>(max_len) - steps;
    for (std::size_t k = 0; k < steps; ++k) {
      std::size_t cell = b * max_len + offset + k;
      batch.inputs[cell] = items[first + k];
      batch.targets[cell] = items[first + k + 1];
      batch.valid_mask[cell] = 1;
    }
  }
  return batch;
}

SequenceBatch make_inference_batch(std::span<const UserSequence> sequences, int max_len) {
  SequenceBatch batch = empty_batch(sequences.size(), max_len);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& items = sequences[b].items;
    batch.users.push_back(sequences[b].user);
    std::size_t window = std::min(items.size(), static_cast<std::size_t>(max_len));
    std::size_t first = items.size() - window;
    std::size_t offset = static_cast<std::size_t>(max_len) - window;
    for (std::size_t k = 0; k < window; ++k) {
      batch.inputs[b * max_len + offset + k] = items[first + k];
    }
  }
  return batch;
}

std::vector<SequenceBatch> make_batches(std::span<const UserSequence> sequences, int batch_size,
                                        int max_len, std::uint64_t seed) {
  if (batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 (the representation-space loss compares users)");
  }
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, StreamTag::kShuffle);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    ranges.emplace_back(start, std::min(order.size(), start + static_cast<std::size_t>(batch_size)));
  }
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }
  std::vector<SequenceBatch> batches;
  batches.reserve(ranges.size());
  for (auto [lo, hi] : ranges) {
    batches.push_back(make_batch(sequences, std::span(order).subspan(lo, hi - lo), max_len));
  }
  return batches;
}

NegativeSamples sample_train_negatives(const SequenceBatch& batch, int n_neg, int catalog_size,
                                       std::uint64_t seed) {
  if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
  if (catalog_size < 2) throw DataError("negative sampling needs at least 2 items in the catalog");
  NegativeSamples out;
  out.batch_size = batch.batch_size;
  out.max_len = batch.max_len;
  out.per_step = n_neg;
  out.ids.assign(static_cast<std::size_t>(batch.batch_size) * batch.max_len * n_neg, kPaddingItem);
  Rng rng = make_rng(seed, StreamTag::kTrainNegatives);
  std::uniform_int_distribution<ItemId> dist(1, catalog_size);
  for (int b = 0; b < batch.batch_size; ++b) {
    for (int t = 0; t < batch.max_len; ++t) {
      if (!batch.valid(b, t)) continue;
      ItemId positive = batch.target(b, t);
      ItemId* dst = out.ids.data() + batch.index(b, t) * n_neg;
      for (int k = 0; k < n_neg; ++k) {
        ItemId v;
        do {
          v = dist(rng);
        } while (v == positive);
        dst[k] = v;
      }
    }
  }
  return out;
}

std::vector<ItemId> sample_eval_negatives(const UserSequence& user, ItemId held_out, int count,
                                          int catalog_size, std::uint64_t seed,
                                          bool exclude_history) {
  std::unordered_set<ItemId> excluded{held_out};
  if (exclude_history) excluded.insert(user.items.begin(), user.items.end());
  std::size_t excluded_in_catalog = 0;
  for (ItemId v : excluded) {
    if (v >= 1 && v <= catalog_size) ++excluded_in_catalog;
  }
  std::size_t available = static_cast<std::size_t>(catalog_size) - excluded_in_catalog;
  if (count < 0 || static_cast<std::size_t>(count) > available) {
    throw ConfigError("cannot draw " + std::to_string(count) + " evaluation negatives from " +
                      std::to_string(available) + " eligible items");
  }
  Rng rng = make_rng(seed, StreamTag::kEvalNegatives, static_cast<std::uint64_t>(user.user));
  std::vector<ItemId> out;
  out.reserve(count);
  if (static_cast<std::size_t>(count) * 2 > available) {
    std::vector<ItemId> pool;
    pool.reserve(available);
    for (ItemId v = 1; v <= catalog_size; ++v) {
      if (!excluded.contains(v)) pool.push_back(v);
    }
    for (int k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      out.push_back(pool[k]);
    }
  } else {
    std::uniform_int_distribution<ItemId> dist(1, catalog_size);
    std::unordered_set<ItemId> chosen;
    while (static_cast<int>(out.size()) < count) {
      ItemId v = dist(rng);
      if (excluded.contains(v) || !chosen.insert(v).second) continue;
      out.push_back(v);
    }
  }
  return out;
}

UserSequence augment_mask(const UserSequence& seq, double ratio, ItemId mask, std::uint64_t seed) {
  clamp_ratio(ratio);
  UserSequence out = seq;
  std::size_t n = seq.items.size();
  std::size_t k = floor_count(ratio, n);
  if (k == 0) return out;
  Rng rng = make_rng(seed, StreamTag::kAugment);
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(positions[i], positions[pick(rng)]);
    out.items[positions[i]] = mask;
  }
  return out;
}

UserSequence augment_reorder(const UserSequence& seq, double ratio, std::uint64_t seed) {
  clamp_ratio(ratio);
  UserSequence out = seq;
  std::size_t n = seq.items.size();
  std::size_t k = floor_count(ratio, n);
  if (k < 2) return out;
  Rng rng = make_rng(seed, StreamTag::kAugment);
  std::uniform_int_distribution<std::size_t> start_dist(0, n - k);
  auto first = out.items.begin() + static_cast<std::ptrdiff_t>(start_dist(rng));
  std::shuffle(first, first + static_cast<std::ptrdiff_t>(k), rng);
  return out;
}

SequenceBatch augment_batch(const SequenceBatch& batch, AugmentKind kind, double ratio, ItemId mask,
                            std::uint64_t seed) {
  SequenceBatch out = batch;
  for (int b = 0; b < batch.batch_size; ++b) {
    int first = 0;
    while (first < batch.max_len && batch.input(b, first) == kPaddingItem) ++first;
    if (first == batch.max_len) continue;
    UserSequence row{batch.users[b],
                     {batch.inputs.begin() + static_cast<std::ptrdiff_t>(batch.index(b, first)),
                      batch.inputs.begin() + static_cast<std::ptrdiff_t>(batch.index(b, batch.max_len - 1) + 1)}};
    std::uint64_t row_seed = derive_seed(seed, static_cast<std::uint64_t>(b));
    UserSequence aug = kind == AugmentKind::kMask ? augment_mask(row, ratio, mask, row_seed)
                                                  : augment_reorder(row, ratio, row_seed);
    std::copy(aug.items.begin(), aug.items.end(),
              out.inputs.begin() + static_cast<std::ptrdiff_t>(batch.index(b, first)));
  }
  return out;
}

std::pair<ItemId, ItemId> sample_two_positives(const UserSequence& seq, std::uint64_t seed) {
  std::size_t n = seq.items.size();
  if (n < 2) throw DataError("two-positive sampling needs a sequence of length >= 2");
  Rng rng = make_rng(seed, StreamTag::kTwoPositives);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::uniform_int_distribution<std::size_t> second(0, n - 2);
  std::size_t i = first(rng);
  std::size_t j = second(rng);
  if (j >= i) ++j;
  return {seq.items[i], seq.items[j]};
}

DatasetManifest describe(const InteractionLog& log) {
  DatasetManifest m;
  m.users = log.num_users();
  m.items = log.num_items();
  m.actions = static_cast<std::int64_t>(log.records.size());
  m.avg_actions = m.users > 0 ? static_cast<double>(m.actions) / m.users : 0.0;
  m.density = (m.users > 0 && m.items > 0)
                  ? static_cast<double>(m.actions) / (static_cast<double>(m.users) * m.items)
                  : 0.0;
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return nlohmann::json{{"users", m.users},
                        {"items", m.items},
                        {"actions", m.actions},
                        {"avg_actions_per_user", m.avg_actions},
                        {"density", m.density}};
}

void write_sequences(const std::filesystem::path& path, std::span<const UserSequence> sequences) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& seq : sequences) {
    out << seq.user;
    for (ItemId v : seq.items) out << ' ' << v;
    out << '\n';
  }
}

}  // namespace ct4rec
