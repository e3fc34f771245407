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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ct4rec {

struct GradcheckOptions {
  int embed_dim = 8;
  int max_len = 5;
  int batch_size = 4;
  int n_neg = 3;
  int n_layers = 2;
  int n_heads = 2;
  int catalog_size = 12;
  double dropout_rate = 0.3;
  double step = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  /// Components to check; empty means all of them.
  std::vector<std::string> components;
  /// Test hook: perturbs the analytic gradient of this component only.
  std::optional<std::string> corrupt;
};

struct TensorCheck {
  std::string tensor;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct ComponentCheck {
  std::string component;
  double loss = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
  std::vector<TensorCheck> tensors;
};

struct GradcheckReport {
  std::vector<ComponentCheck> components;
  double tolerance = 0.0;
  bool passed = true;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  std::string to_text() const;
  const ComponentCheck* find(const std::string& component) const;
};

/// basic, rd, dr, aux_cosine, aux_l2, aux_rep_kl, two_pos, contrastive, combined.
const std::vector<std::string>& gradcheck_components();

/// Central finite differences against the analytic gradient, per component
/// and per parameter tensor, on a small double-precision model with fixed
/// dropout masks. Relative error is ||a - f|| / max(||a||, ||f||).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace ct4rec
