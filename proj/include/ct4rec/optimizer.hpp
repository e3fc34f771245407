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

#include "ct4rec/encoder.hpp"

namespace ct4rec {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, shaped like the parameters.
template <class T>
struct AdamMoments {
  ParameterSet<T> first;
  ParameterSet<T> second;

  static AdamMoments zeros_like(const ParameterSet<T>& params) {
    return {params.zeros_like(), params.zeros_like()};
  }
};

/// One bias-corrected Adam step. `step` is the 1-based index of this update.
template <class T>
void adam_update(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamMoments<T>& moments,
                 double learning_rate, std::int64_t step, const AdamConfig& config = {});

template <class T>
double global_norm(const ParameterSet<T>& grads);

/// Rescales grads so that their global L2 norm is at most max_norm.
template <class T>
void clip_global_norm(ParameterSet<T>& grads, double max_norm);

}  // namespace ct4rec
