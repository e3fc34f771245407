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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ct4rec/corpus.hpp"

namespace ct4rec::testing {

/// Users walk the catalog deterministically: item i is followed by i % catalog + 1.
inline std::vector<UserSequence> rule_sequences(int n_users, int catalog, int min_len, int max_len,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> start(1, catalog);
  std::uniform_int_distribution<int> length(min_len, max_len);
  std::vector<UserSequence> out;
  for (int u = 0; u < n_users; ++u) {
    UserSequence s{u, {}};
    int item = start(rng);
    const int n = length(rng);
    for (int k = 0; k < n; ++k) {
      s.items.push_back(item);
      item = item % catalog + 1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<UserSequence> random_sequences(int n_users, int catalog, int min_len, int max_len,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> item(1, catalog);
  std::uniform_int_distribution<int> length(min_len, max_len);
  std::vector<UserSequence> out;
  for (int u = 0; u < n_users; ++u) {
    UserSequence s{u, {}};
    const int n = length(rng);
    for (int k = 0; k < n; ++k) s.items.push_back(item(rng));
    out.push_back(std::move(s));
  }
  return out;
}

/// Raw tab-separated triples with string ids, shuffled line order and
/// increasing timestamps per user.
inline void write_tsv(const std::filesystem::path& path, const std::vector<UserSequence>& seqs,
                      std::uint64_t seed) {
  std::vector<std::string> lines;
  for (const auto& s : seqs) {
    for (std::size_t k = 0; k < s.items.size(); ++k) {
      lines.push_back("user" + std::to_string(s.user) + "\titem" + std::to_string(s.items[k]) + "\t" +
                      std::to_string(1000 + 10 * k));
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(lines.begin(), lines.end(), rng);
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ct4rec_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ct4rec::testing
