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
#include <random>

namespace ct4rec {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent stream seeds from
/// (seed, index, ...) tuples so that no sampler carries hidden state.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed) { return seed; }

template <class... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(index + 0x632BE59BD9B4E019ULL)),
                     static_cast<std::uint64_t>(rest)...);
}

/// Purpose tags keep streams for different consumers disjoint.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kTrainNegatives = 3,
  kDropout = 4,
  kAugment = 5,
  kTwoPositives = 6,
  kEvalNegatives = 7,
  kValidation = 8,
};

inline Rng make_rng(std::uint64_t seed, StreamTag tag) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(tag)));
}

template <class... Rest>
inline Rng make_rng(std::uint64_t seed, StreamTag tag, Rest... rest) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(tag), static_cast<std::uint64_t>(rest)...));
}

}  // namespace ct4rec
