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

#include "ct4rec/config.hpp"

#include <fstream>
#include <set>

#include "ct4rec/error.hpp"
#include "ct4rec/rng.hpp"

namespace ct4rec {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object and complains about any it did not ask for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + path(key) + ": " + e.what());
    }
  }

  template <class V, class Parse>
  void read_enum(const char* key, V& out, Parse parse) {
    std::string name;
    bool present = j_.contains(key);
    read(key, name);
    if (present) out = parse(name);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key " + path(key));
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_encoder(const json& j, EncoderConfig& c) {
  Section s(j, "encoder");
  s.read("embed_dim", c.embed_dim);
  s.read("n_layers", c.n_layers);
  s.read("n_heads", c.n_heads);
  s.read("max_seq_len", c.max_seq_len);
  s.read("dropout_rate", c.dropout_rate);
  s.read("ffn_dim", c.ffn_dim);
  s.finish();
}

void read_weights(const json& j, LossWeights& w) {
  Section s(j, "weights");
  s.read("alpha", w.alpha);
  s.read("beta", w.beta);
  s.read("dr_temperature", w.dr_temperature);
  s.read_enum("aux_mode", w.aux_mode, parse_aux_mode);
  s.read("aux_weight", w.aux_weight);
  s.read("two_pos_weight", w.two_pos_weight);
  s.read("contrastive_weight", w.contrastive_weight);
  s.read("contrastive_temperature", w.contrastive_temperature);
  s.read_enum("consistency_source", w.consistency_source, parse_consistency_source);
  s.read("mask_ratio", w.mask_ratio);
  s.read("reorder_ratio", w.reorder_ratio);
  s.read_enum("dr_similarity", w.dr_similarity, parse_similarity);
  s.read("dr_all_positions", w.dr_all_positions);
  s.finish();
}

void read_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  s.read("learning_rate", c.learning_rate);
  s.read("batch_size", c.batch_size);
  s.read("max_epochs", c.max_epochs);
  s.read("early_stop_patience", c.early_stop_patience);
  s.read("adam_beta1", c.adam.beta1);
  s.read("adam_beta2", c.adam.beta2);
  s.read("adam_eps", c.adam.eps);
  s.read("eval_every", c.eval_every);
  s.read("n_neg", c.n_neg);
  s.read("valid_negatives", c.valid_negatives);
  s.read("clip_norm", c.clip_norm);
  s.read("force_two_pass", c.force_two_pass);
  s.finish();
}

void check_grid_axis(const std::vector<double>& values, const char* name, bool (*ok)(double),
                     const char* rule) {
  for (double v : values) {
    if (!ok(v)) throw ConfigError(std::string("sweep.") + name + " value " + std::to_string(v) + " " + rule);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (dataset.min_interactions < 1) throw ConfigError("dataset.min_interactions must be >= 1");
  if (protocol.ks.empty()) throw ConfigError("protocol.ks must not be empty");
  for (int k : protocol.ks) {
    if (k < 1) throw ConfigError("protocol.ks entries must be >= 1");
  }
  if (protocol.batch_size < 1) throw ConfigError("protocol.batch_size must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  check_grid_axis(sweep.alpha, "alpha", [](double v) { return v >= 0.0; }, "must be >= 0");
  check_grid_axis(sweep.beta, "beta", [](double v) { return v >= 0.0; }, "must be >= 0");
  check_grid_axis(sweep.tau, "tau", [](double v) { return v > 0.0; }, "must be > 0");
  check_grid_axis(sweep.dropout, "dropout", [](double v) { return v >= 0.0 && v < 1.0; }, "must be in [0, 1)");
}

void ExperimentConfig::sync_seeds() {
  train.seed = seed;
  protocol.seed = derive_seed(seed, static_cast<std::uint64_t>(StreamTag::kEvalNegatives));
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"n_layers", c.n_layers},         {"n_heads", c.n_heads},
          {"max_seq_len", c.max_seq_len}, {"dropout_rate", c.dropout_rate}, {"ffn_dim", c.ffn_dim}};
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"alpha", w.alpha},
          {"beta", w.beta},
          {"dr_temperature", w.dr_temperature},
          {"aux_mode", std::string(to_string(w.aux_mode))},
          {"aux_weight", w.aux_weight},
          {"two_pos_weight", w.two_pos_weight},
          {"contrastive_weight", w.contrastive_weight},
          {"contrastive_temperature", w.contrastive_temperature},
          {"consistency_source", std::string(to_string(w.consistency_source))},
          {"mask_ratio", w.mask_ratio},
          {"reorder_ratio", w.reorder_ratio},
          {"dr_similarity", std::string(to_string(w.dr_similarity))},
          {"dr_all_positions", w.dr_all_positions}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"eval_every", c.eval_every},
          {"n_neg", c.n_neg},
          {"valid_negatives", c.valid_negatives},
          {"clip_norm", c.clip_norm},
          {"force_two_pass", c.force_two_pass}};
}

nlohmann::json to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"path", c.dataset.path},
                  {"format", std::string(to_string(c.dataset.format))},
                  {"min_interactions", c.dataset.min_interactions},
                  {"prepared_dir", c.dataset.prepared_dir}};
  j["encoder"] = to_json(c.train.encoder);
  j["train"] = to_json(c.train);
  j["weights"] = to_json(c.train.weights);
  j["protocol"] = {{"negatives", c.protocol.negatives},
                   {"ks", c.protocol.ks},
                   {"exclude_history", c.protocol.exclude_history},
                   {"batch_size", c.protocol.batch_size}};
  j["sweep"] = {{"alpha", c.sweep.alpha}, {"beta", c.sweep.beta}, {"dropout", c.sweep.dropout}, {"tau", c.sweep.tau}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  Section top(j, "");
  if (const json* d = top.child("dataset")) {
    Section s(*d, "dataset");
    s.read("path", c.dataset.path);
    s.read_enum("format", c.dataset.format, parse_input_format);
    s.read("min_interactions", c.dataset.min_interactions);
    s.read("prepared_dir", c.dataset.prepared_dir);
    s.finish();
  }
  if (const json* e = top.child("encoder")) read_encoder(*e, c.train.encoder);
  if (const json* t = top.child("train")) read_train(*t, c.train);
  if (const json* w = top.child("weights")) read_weights(*w, c.train.weights);
  if (const json* p = top.child("protocol")) {
    Section s(*p, "protocol");
    s.read("negatives", c.protocol.negatives);
    s.read("ks", c.protocol.ks);
    s.read("exclude_history", c.protocol.exclude_history);
    s.read("batch_size", c.protocol.batch_size);
    s.finish();
  }
  if (const json* g = top.child("sweep")) {
    Section s(*g, "sweep");
    s.read("alpha", c.sweep.alpha);
    s.read("beta", c.sweep.beta);
    s.read("dropout", c.sweep.dropout);
    s.read("tau", c.sweep.tau);
    s.finish();
  }
  top.read("output_dir", c.output_dir);
  top.read("seed", c.seed);
  top.finish();
  c.sync_seeds();
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [raw_key, value] : overrides) {
    std::string key = raw_key == "aux" ? "weights.aux_mode" : raw_key;
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      std::size_t dot = key.find('.', start);
      std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown override --" + raw_key);
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("override --" + raw_key + " names a section, not a value");
    if (node->is_string()) {
      *node = value;
      continue;
    }
    json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? json(value) : parsed;
  }
}

std::vector<std::pair<std::string, std::string>> parse_override_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok.rfind("--", 0) != 0 || tok.size() == 2) throw ConfigError("unexpected argument '" + tok + "'");
    std::string body = tok.substr(2);
    auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= tokens.size()) throw ConfigError("override --" + body + " is missing a value");
      out.emplace_back(body, tokens[++i]);
    }
  }
  return out;
}

}  // namespace ct4rec
