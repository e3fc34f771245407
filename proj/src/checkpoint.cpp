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

#include "ct4rec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ct4rec/error.hpp"

namespace ct4rec {

namespace {

void put_le32(std::vector<char>& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFFu));
}

float get_le32(const char* p) {
  std::uint32_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& dir,
                          const std::vector<std::pair<std::string, const Matrix<float>*>>& tensors,
                          const std::vector<std::string>& scalar_names) {
  std::filesystem::create_directories(dir);
  std::vector<char> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    std::uint64_t offset = blob.size();
    const float* data = m->data();
    for (Eigen::Index i = 0; i < m->size(); ++i) put_le32(blob, data[i]);
    nlohmann::json shape = m->rows() == 1 ? nlohmann::json::array({m->cols()})
                                          : nlohmann::json::array({m->rows(), m->cols()});
    entries.push_back({{"name", name},
                       {"shape", shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", blob.size() - offset}});
  }
  nlohmann::json manifest{{"format", "ct4rec-tensors"},
                          {"version", 1},
                          {"byte_order", "little"},
                          {"tensors", entries},
                          {"scalars", scalar_names}};
  {
    std::ofstream out(dir / kTensorsFile, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + (dir / kTensorsFile).string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + (dir / kManifestFile).string());
  out << manifest.dump(2) << '\n';
}

TensorArchive read_tensor_archive(const std::filesystem::path& dir) {
  TensorArchive archive;
  std::ifstream mf(dir / kManifestFile);
  if (!mf) throw CheckpointError("missing " + (dir / kManifestFile).string());
  try {
    archive.manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt manifest: " + std::string(e.what()));
  }
  std::ifstream bf(dir / kTensorsFile, std::ios::binary);
  if (!bf) throw CheckpointError("missing " + (dir / kTensorsFile).string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  try {
    const auto& m = archive.manifest;
    if (m.at("format") != "ct4rec-tensors" || m.at("byte_order") != "little") {
      throw CheckpointError("unsupported checkpoint format");
    }
    std::uint64_t expected_offset = 0;
    for (const auto& e : m.at("tensors")) {
      std::string name = e.at("name").get<std::string>();
      if (e.at("dtype") != "f32") throw CheckpointError(name + ": unsupported dtype");
      const auto& shape = e.at("shape");
      Eigen::Index rows = 1;
      Eigen::Index cols = 0;
      if (shape.size() == 1) {
        cols = shape[0].get<Eigen::Index>();
      } else if (shape.size() == 2) {
        rows = shape[0].get<Eigen::Index>();
        cols = shape[1].get<Eigen::Index>();
      } else {
        throw CheckpointError(name + ": tensors must be 1-d or 2-d");
      }
      auto offset = e.at("offset").get<std::uint64_t>();
      auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (rows < 0 || cols < 0 || nbytes != static_cast<std::uint64_t>(rows * cols) * 4 ||
          offset != expected_offset || offset + nbytes > blob.size()) {
        throw CheckpointError(name + ": byte range does not match shape or blob size");
      }
      Matrix<float> t(rows, cols);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get_le32(blob.data() + offset + 4 * i);
      expected_offset = offset + nbytes;
      if (!archive.tensors.emplace(name, std::move(t)).second) {
        throw CheckpointError("duplicate tensor " + name);
      }
      archive.order.push_back(name);
    }
    if (expected_offset != blob.size()) throw CheckpointError("tensors.bin has trailing bytes");
    archive.scalars = m.value("scalars", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt manifest: " + std::string(e.what()));
  }
  return archive;
}

}  // namespace ct4rec
