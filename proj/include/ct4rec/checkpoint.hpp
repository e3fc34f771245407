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

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ct4rec/tensor.hpp"

namespace ct4rec {

/// On-disk tensor container: `manifest.json` lists each tensor's name,
/// shape, dtype (always f32) and byte range inside `tensors.bin`, which holds
/// the raw little-endian values back to back in manifest order.
struct TensorArchive {
  std::vector<std::string> order;
  std::map<std::string, Matrix<float>> tensors;
  std::vector<std::string> scalars;  // names of scalar fields stored alongside
  nlohmann::json manifest;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTensorsFile = "tensors.bin";

void write_tensor_archive(const std::filesystem::path& dir,
                          const std::vector<std::pair<std::string, const Matrix<float>*>>& tensors,
                          const std::vector<std::string>& scalar_names = {});

TensorArchive read_tensor_archive(const std::filesystem::path& dir);

}  // namespace ct4rec
