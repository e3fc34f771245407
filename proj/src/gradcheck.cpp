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

#include "ct4rec/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "ct4rec/corpus.hpp"
#include "ct4rec/encoder.hpp"
#include "ct4rec/error.hpp"
#include "ct4rec/objectives.hpp"
#include "ct4rec/rng.hpp"

namespace ct4rec {

namespace {

struct ComponentSetup {
  LossWeights weights;
  TermScales scales;
  bool two_pass = true;
};

ComponentSetup setup_for(const std::string& name) {
  ComponentSetup s;
  s.scales = TermScales{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  s.weights.contrastive_temperature = 0.5;
  if (name == "basic") {
    s.scales.basic = 1.0;
  } else if (name == "basic_single") {
    s.scales.basic = 1.0;
    s.two_pass = false;
  } else if (name == "rd") {
    s.scales.rd = 1.0;
  } else if (name == "dr") {
    s.scales.dr = 1.0;
  } else if (name == "aux_cosine" || name == "aux_l2" || name == "aux_rep_kl") {
    s.weights.aux_mode = parse_aux_mode(name.substr(4));
    s.scales.aux = 1.0;
  } else if (name == "two_pos") {
    s.scales.two_pos = 1.0;
  } else if (name == "contrastive") {
    s.scales.contrastive = 1.0;
  } else if (name == "combined") {
    s.weights.aux_mode = AuxMode::kCosine;
    s.scales = TermScales{1.0, 0.7, 0.5, 0.3, 0.2, 0.4};
  } else {
    throw ConfigError("unknown gradcheck component '" + name + "'");
  }
  return s;
}

struct Fixture {
  EncoderConfig encoder;
  SequenceBatch batch;
  NegativeSamples negatives;
  std::vector<std::pair<ItemId, ItemId>> positives;
  ParameterSet<double> params;
  std::uint64_t seed1 = 0;
  std::uint64_t seed2 = 0;
};

Fixture make_fixture(const GradcheckOptions& o) {
  Fixture f;
  f.encoder.embed_dim = o.embed_dim;
  f.encoder.n_layers = o.n_layers;
  f.encoder.n_heads = o.n_heads;
  f.encoder.max_seq_len = o.max_len;
  f.encoder.dropout_rate = o.dropout_rate;
  f.encoder.validate();

  // Sequence lengths cycle so the batch always contains left padding.
  Rng rng = make_rng(o.seed, StreamTag::kInit, 1);
  std::uniform_int_distribution<ItemId> item(1, o.catalog_size);
  std::vector<UserSequence> seqs;
  for (int b = 0; b < o.batch_size; ++b) {
    int len = 2 + (b * 3) % (o.max_len + 1);
    UserSequence s{static_cast<UserId>(b), {}};
    for (int i = 0; i < len; ++i) s.items.push_back(item(rng));
    seqs.push_back(std::move(s));
  }
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  f.batch = make_batch(seqs, order, o.max_len);
  f.negatives = sample_train_negatives(f.batch, o.n_neg, o.catalog_size, derive_seed(o.seed, 2));
  for (int b = 0; b < f.batch.batch_size; ++b) {
    f.positives.push_back(sample_two_positives(f.batch.row_sequence(b), derive_seed(o.seed, 3, b)));
  }

  // Move away from the near-identity initialisation so every path carries signal.
  f.params = init_params<double>(f.encoder, o.catalog_size, o.seed);
  Rng noise = make_rng(o.seed, StreamTag::kInit, 4);
  std::normal_distribution<double> jitter(0.0, 0.3);
  f.params.visit([&](const std::string&, Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += jitter(noise);
  });
  f.params.item_embeddings.row(kPaddingItem).setZero();
  f.seed1 = derive_seed(o.seed, 5, 1);
  f.seed2 = derive_seed(o.seed, 5, 2);
  return f;
}

LossBreakdown objective(const Fixture& f, const ParameterSet<double>& params, const ComponentSetup& s,
                        ParameterSet<double>* grads) {
  PassOutput<double> p1, p2;
  if (s.two_pass) {
    std::tie(p1, p2) = forward_two_pass(params, f.encoder, f.batch, f.seed1, f.seed2);
  } else {
    p1 = forward(params, f.encoder, f.batch, f.seed1, 1);
  }
  ObjectiveInputs<double> in{&p1, s.two_pass ? &p2 : nullptr, &f.batch, &f.negatives, &params, f.positives};
  if (grads == nullptr) return evaluate_terms(in, s.weights, s.scales);
  ObjectiveGradients<double> g;
  LossBreakdown loss = evaluate_terms(in, s.weights, s.scales, &g);
  *grads = params.zeros_like();
  grads->item_embeddings = g.d_items1;
  backward(params, f.encoder, p1, g.d_reps1, *grads);
  if (s.two_pass) {
    grads->item_embeddings += g.d_items2;
    backward(params, f.encoder, p2, g.d_reps2, *grads);
  }
  return loss;
}

ComponentCheck check_component(const Fixture& f, const std::string& name, const GradcheckOptions& o) {
  const ComponentSetup setup = setup_for(name);
  ComponentCheck result;
  result.component = name;

  ParameterSet<double> analytic;
  result.loss = objective(f, f.params, setup, &analytic).total;
  if (o.corrupt && *o.corrupt == name) {
    analytic.visit([](const std::string&, Matrix<double>& m) { m *= 1.01; });
  }

  std::vector<const Matrix<double>*> analytic_tensors;
  analytic.visit([&](const std::string&, const Matrix<double>& m) { analytic_tensors.push_back(&m); });

  ParameterSet<double> probe = f.params;
  std::size_t index = 0;
  probe.visit([&](const std::string& tensor, Matrix<double>& m) {
    const Matrix<double>& a = *analytic_tensors[index++];
    Matrix<double> numeric(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + o.step;
      const double up = objective(f, probe, setup, nullptr).total;
      m.data()[i] = saved - o.step;
      const double down = objective(f, probe, setup, nullptr).total;
      m.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * o.step);
    }
    TensorCheck t;
    t.tensor = tensor;
    t.analytic_norm = a.norm();
    t.numeric_norm = numeric.norm();
    const double denom = std::max(t.analytic_norm, t.numeric_norm);
    t.rel_error = denom > 0.0 ? (a - numeric).norm() / denom : 0.0;
    result.max_rel_error = std::max(result.max_rel_error, t.rel_error);
    result.tensors.push_back(std::move(t));
  });
  result.passed = result.max_rel_error < o.tolerance;
  return result;
}

}  // namespace

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names{"basic",      "basic_single", "rd",      "dr",
                                              "aux_cosine", "aux_l2",       "aux_rep_kl", "two_pos",
                                              "contrastive", "combined"};
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& names = options.components.empty() ? gradcheck_components() : options.components;
  for (const auto& n : names) setup_for(n);
  if (options.corrupt) setup_for(*options.corrupt);

  const Fixture fixture = make_fixture(options);
  GradcheckReport report;
  report.tolerance = options.tolerance;
  for (const auto& n : names) {
    report.components.push_back(check_component(fixture, n, options));
    report.passed = report.passed && report.components.back().passed;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components) {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& t : c.tensors) tensors[t.tensor] = t.rel_error;
    comps.push_back({{"component", c.component},
                     {"passed", c.passed},
                     {"loss", c.loss},
                     {"max_rel_error", c.max_rel_error},
                     {"rel_error_by_tensor", tensors}});
  }
  return {{"passed", passed}, {"tolerance", tolerance}, {"components", comps}};
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : components) {
    char line[160];
    std::snprintf(line, sizeof line, "%-13s %s  max_rel_error=%.3e  loss=%.6f\n", c.component.c_str(),
                  c.passed ? "ok  " : "FAIL", c.max_rel_error, c.loss);
    os << line;
    if (!c.passed) {
      for (const auto& t : c.tensors) {
        if (t.rel_error >= tolerance) os << "    " << t.tensor << " rel_error=" << t.rel_error << '\n';
      }
    }
  }
  os << (passed ? "all components within " : "gradient check failed at tolerance ") << tolerance << '\n';
  return os.str();
}

const ComponentCheck* GradcheckReport::find(const std::string& component) const {
  for (const auto& c : components) {
    if (c.component == component) return &c;
  }
  return nullptr;
}

}  // namespace ct4rec
