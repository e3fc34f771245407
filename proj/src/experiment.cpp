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

#include "ct4rec/experiment.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ct4rec/error.hpp"

namespace ct4rec {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ExperimentConfig with_point(ExperimentConfig config, const SweepPoint& p, const fs::path& dir) {
  config.train.weights.alpha = p.alpha;
  config.train.weights.beta = p.beta;
  config.train.encoder.dropout_rate = p.dropout;
  config.train.weights.dr_temperature = p.tau;
  if (config.dataset.prepared_dir.empty()) config.dataset.prepared_dir = prepared_dir(config).string();
  config.output_dir = dir.string();
  // The shared base seed makes grid points a paired comparison.
  config.sweep = {};
  return config;
}

}  // namespace

fs::path prepared_dir(const ExperimentConfig& config) {
  if (!config.dataset.prepared_dir.empty()) return config.dataset.prepared_dir;
  if (config.dataset.path.empty()) throw ConfigError("set dataset.path or dataset.prepared_dir");
  fs::path raw(config.dataset.path);
  return raw.parent_path() / (raw.stem().string() + "_prepared");
}

PreparedData read_prepared(const fs::path& dir) {
  PreparedData data;
  nlohmann::json m = read_json(dir / kDatasetManifestFile);
  try {
    data.manifest.users = m.at("users").get<int>();
    data.manifest.items = m.at("items").get<int>();
    data.manifest.actions = m.at("actions").get<std::int64_t>();
    data.manifest.avg_actions = m.at("avg_actions_per_user").get<double>();
    data.manifest.density = m.at("density").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad dataset manifest in " + dir.string() + ": " + e.what());
  }

  std::ifstream in(dir / kSequencesFile);
  if (!in) throw DataError("missing " + (dir / kSequencesFile).string() + "; run `prepare` first");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    UserSequence seq;
    ItemId item = 0;
    if (!(fields >> seq.user)) throw DataError("sequences line " + std::to_string(line_no) + ": missing user");
    while (fields >> item) {
      if (item < 1 || item > data.manifest.items) {
        throw DataError("sequences line " + std::to_string(line_no) + ": item " + std::to_string(item) +
                        " outside the catalog");
      }
      seq.items.push_back(item);
    }
    if (!fields.eof()) throw DataError("sequences line " + std::to_string(line_no) + ": malformed item id");
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

DatasetManifest cmd_prepare(const ExperimentConfig& config) {
  config.validate();
  if (config.dataset.path.empty()) throw ConfigError("dataset.path is not set");
  InteractionLog log = ingest(fs::path(config.dataset.path), config.dataset.format, config.dataset.min_interactions);
  DatasetManifest manifest = describe(log);
  fs::path dir = prepared_dir(config);
  fs::create_directories(dir);
  write_sequences(dir / kSequencesFile, build_sequences(log));
  write_text(dir / kDatasetManifestFile, to_json(manifest).dump(2) + "\n");
  return manifest;
}

TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream* progress) {
  config.validate();
  PreparedData prepared = read_prepared(prepared_dir(config));
  TrainingData data = TrainingData::from_sequences(std::move(prepared.sequences), prepared.manifest.items);
  if (data.test.empty()) throw DataError("no users with at least two interactions");

  TrainOutcome outcome;
  outcome.run_dir = config.output_dir;
  fs::create_directories(outcome.run_dir);
  write_text(outcome.run_dir / "config.json", to_json(config).dump(2) + "\n");

  std::ofstream metrics(outcome.run_dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream epochs(outcome.run_dir / "epochs.jsonl", std::ios::trunc);
  if (!metrics || !epochs) throw Error("cannot write logs in " + outcome.run_dir.string());
  const fs::path best_dir = outcome.run_dir / "checkpoint";

  TrainHooks hooks;
  hooks.on_step = [&](const nlohmann::json& line) { metrics << line.dump() << '\n'; };
  hooks.on_epoch = [&](const EpochRecord& r) {
    nlohmann::json line{{"epoch", r.epoch},
                        {"steps", r.steps},
                        {"train_seconds", r.train_seconds},
                        {"mean_loss", to_json(r.mean_loss)}};
    if (r.valid_ndcg10) line["valid_ndcg10"] = *r.valid_ndcg10;
    epochs << line.dump() << '\n';
    epochs.flush();
    if (progress != nullptr) {
      *progress << "epoch " << r.epoch << "  loss " << r.mean_loss.total;
      if (r.valid_ndcg10) *progress << "  valid NDCG@10 " << *r.valid_ndcg10;
      *progress << "  (" << r.train_seconds << " s)\n";
    }
  };
  hooks.on_best = [&](const TrainState& s) { save_checkpoint(s, best_dir); };

  TrainResult result = train(config.train, data, hooks);
  save_checkpoint(result.state, outcome.run_dir / "final");
  if (result.state.best_epoch < 0) save_checkpoint(result.state, best_dir);

  outcome.report = evaluate(result.best_params, config.train.encoder, data.test, config.protocol);
  outcome.log = std::move(result.log);
  outcome.best_epoch = result.state.best_epoch;
  nlohmann::json report = outcome.report.to_json();
  report["best_epoch"] = outcome.best_epoch;
  report["epochs"] = outcome.log.epochs.size();
  report["early_stopped"] = outcome.log.early_stopped;
  write_text(outcome.run_dir / "report.json", report.dump(2) + "\n");
  write_text(outcome.run_dir / "report.txt", outcome.report.to_table());
  return outcome;
}

EvalReport cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint, std::optional<int> negatives) {
  config.validate();
  PreparedData prepared = read_prepared(prepared_dir(config));
  const int catalog = prepared.manifest.items;
  TrainState state = load_checkpoint(checkpoint, config.train.encoder, catalog);
  TrainingData data = TrainingData::from_sequences(std::move(prepared.sequences), catalog);
  EvalProtocol protocol = config.protocol;
  if (negatives) protocol.negatives = *negatives;
  return evaluate(state.params, config.train.encoder, data.test, protocol);
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& options) { return run_gradcheck(options); }

std::vector<SweepPoint> expand_grid(const ExperimentConfig& config) {
  const auto axis = [](const std::vector<double>& v, double base) {
    return v.empty() ? std::vector<double>{base} : v;
  };
  std::vector<SweepPoint> points;
  for (double a : axis(config.sweep.alpha, config.train.weights.alpha)) {
    for (double b : axis(config.sweep.beta, config.train.weights.beta)) {
      for (double d : axis(config.sweep.dropout, config.train.encoder.dropout_rate)) {
        for (double t : axis(config.sweep.tau, config.train.weights.dr_temperature)) {
          points.push_back({a, b, d, t});
        }
      }
    }
  }
  return points;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, bool parallel, std::ostream* progress) {
  config.validate();
  const std::vector<SweepPoint> points = expand_grid(config);
  const fs::path root = config.output_dir;
  fs::create_directories(root);
  std::vector<SweepRow> rows(points.size());
  std::mutex progress_mutex;

  const auto run_point = [&](std::size_t i) {
    SweepRow& row = rows[i];
    row.point = points[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      char name[32];
      std::snprintf(name, sizeof name, "point_%03zu", i);
      ExperimentConfig point_config = with_point(config, points[i], root / name);
      TrainOutcome outcome = cmd_train(point_config);
      row.report = outcome.report;
      row.epochs = static_cast<int>(outcome.log.epochs.size());
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (progress != nullptr) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      *progress << "point " << i << " alpha=" << row.point.alpha << " beta=" << row.point.beta
                << " dropout=" << row.point.dropout << " tau=" << row.point.tau << ": "
                << (row.report ? "NDCG@10 " + format_double(row.report->ndcg.count(10) ? row.report->ndcg.at(10)
                                                                                          : NAN)
                               : "failed: " + row.error)
                << '\n';
    }
  };

  if (!parallel || points.size() < 2) {
    for (std::size_t i = 0; i < points.size(); ++i) run_point(i);
  } else {
    std::atomic<std::size_t> next{0};
    const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                             static_cast<unsigned>(points.size())));
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < points.size(); i = next++) run_point(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  write_text(root / "sweep.csv", sweep_csv(rows));
  nlohmann::json failures = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].report) failures.push_back({{"point", i}, {"error", rows[i].error}});
  }
  if (!failures.empty()) write_text(root / "sweep_errors.json", failures.dump(2) + "\n");
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kSweepHeader << '\n';
  for (const auto& row : rows) {
    const auto metric = [&](const std::map<int, double> EvalReport::*field, int k) {
      if (!row.report) return std::string("nan");
      const auto& m = (*row.report).*field;
      auto it = m.find(k);
      return it == m.end() ? std::string("nan") : format_double(it->second);
    };
    os << format_double(row.point.alpha) << ',' << format_double(row.point.beta) << ','
       << format_double(row.point.dropout) << ',' << format_double(row.point.tau) << ','
       << metric(&EvalReport::hr, 1) << ',' << metric(&EvalReport::hr, 5) << ',' << metric(&EvalReport::hr, 10)
       << ',' << metric(&EvalReport::hr, 20) << ',' << metric(&EvalReport::ndcg, 5) << ','
       << metric(&EvalReport::ndcg, 10) << ',' << metric(&EvalReport::ndcg, 20) << ',' << row.epochs << ','
       << format_double(row.seconds) << '\n';
  }
  return os.str();
}

}  // namespace ct4rec
