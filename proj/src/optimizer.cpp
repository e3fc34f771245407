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

#include "ct4rec/optimizer.hpp"

#include <cmath>
#include <vector>

#include "ct4rec/error.hpp"

namespace ct4rec {

template <class T>
void adam_update(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamMoments<T>& moments,
                 double learning_rate, std::int64_t step, const AdamConfig& config) {
  if (step < 1) throw ConfigError("adam step index is 1-based");
  std::vector<const Matrix<T>*> g;
  std::vector<Matrix<T>*> m;
  std::vector<Matrix<T>*> v;
  grads.visit([&](const std::string&, const Matrix<T>& t) { g.push_back(&t); });
  moments.first.visit([&](const std::string&, Matrix<T>& t) { m.push_back(&t); });
  moments.second.visit([&](const std::string&, Matrix<T>& t) { v.push_back(&t); });

  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(step)));
  const T bc2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(step)));
  const T lr = static_cast<T>(learning_rate);
  const T eps = static_cast<T>(config.eps);
  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix<T>& p) {
    const Matrix<T>& gi = *g[i];
    Matrix<T>& mi = *m[i];
    Matrix<T>& vi = *v[i];
    ++i;
    if (gi.rows() != p.rows() || gi.cols() != p.cols() || mi.rows() != p.rows() || vi.cols() != p.cols()) {
      throw ConfigError("adam: shape mismatch for " + name);
    }
    T* pd = p.data();
    T* md = mi.data();
    T* vd = vi.data();
    const T* gd = gi.data();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      md[k] = b1 * md[k] + (T(1) - b1) * gd[k];
      vd[k] = b2 * vd[k] + (T(1) - b2) * gd[k] * gd[k];
      pd[k] -= lr * (md[k] / bc1) / (std::sqrt(vd[k] / bc2) + eps);
    }
  });
}

template <class T>
double global_norm(const ParameterSet<T>& grads) {
  double sq = 0.0;
  grads.visit([&](const std::string&, const Matrix<T>& t) {
    sq += static_cast<double>(t.template cast<double>().squaredNorm());
  });
  return std::sqrt(sq);
}

template <class T>
void clip_global_norm(ParameterSet<T>& grads, double max_norm) {
  double n = global_norm(grads);
  if (n <= max_norm || n == 0.0) return;
  const T factor = static_cast<T>(max_norm / n);
  grads.visit([&](const std::string&, Matrix<T>& t) { t *= factor; });
}

template void adam_update<float>(ParameterSet<float>&, const ParameterSet<float>&, AdamMoments<float>&,
                                 double, std::int64_t, const AdamConfig&);
template void adam_update<double>(ParameterSet<double>&, const ParameterSet<double>&,
                                  AdamMoments<double>&, double, std::int64_t, const AdamConfig&);
template double global_norm<float>(const ParameterSet<float>&);
template double global_norm<double>(const ParameterSet<double>&);
template void clip_global_norm<float>(ParameterSet<float>&, double);
template void clip_global_norm<double>(ParameterSet<double>&, double);

}  // namespace ct4rec
