// Copyright 2026 The calattack Authors.
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

#include <algorithm>
#include <chrono>
#include <ctime>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "calattack/harness.hpp"
#include "json.hpp"

namespace calattack {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config <-> JSON

namespace {

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void read_white_box(const json& j, WhiteBoxSettings& wb) {
  read(j, "epsilon", wb.epsilon);
  read(j, "step_size", wb.step_size);
  read(j, "iterations", wb.iterations);
  read(j, "keep_under", wb.keep_under);
  read(j, "keep_over", wb.keep_over);
  read(j, "stop_loss", wb.stop_loss);
}

json write_white_box(const WhiteBoxSettings& wb) {
  return {{"epsilon", wb.epsilon},       {"step_size", wb.step_size},
          {"iterations", wb.iterations}, {"keep_under", wb.keep_under},
          {"keep_over", wb.keep_over},   {"stop_loss", wb.stop_loss}};
}

void read_cs(const json& j, CSConfig& cs) {
  read(j, "num_bins", cs.num_bins);
  read(j, "target_bins", cs.target_bins);
  read(j, "t_min", cs.t_min);
  read(j, "t_max", cs.t_max);
  read(j, "grid_points", cs.grid_points);
  read(j, "tolerance", cs.tolerance);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.source != "blobs" && dataset.source != "csv") {
    throw std::invalid_argument("dataset.source must be blobs or csv");
  }
  if (dataset.source == "csv" && dataset.csv_path.empty()) {
    throw std::invalid_argument("dataset.csv_path is required for csv data");
  }
  if (victim.source == "model") {
    if (victim.model_path.empty()) throw std::invalid_argument("victim.model_path is required");
  } else if (victim.source == "remote") {
    if (victim.remote.url.empty()) throw std::invalid_argument("victim.remote.url is required");
  } else if (victim.source == "train") {
    victim.train.validate();
  } else {
    throw std::invalid_argument("victim.source must be one of train, model, remote");
  }
  const auto& d = defence.kind;
  if (d != "none" && d != "ts" && d != "cs" && d != "caat" && d != "at") {
    throw std::invalid_argument("defence.kind must be one of none, ts, cs, caat, at");
  }
  if ((d == "caat" || d == "at") && victim.source != "train") {
    throw std::invalid_argument("training-time defences need victim.source = train");
  }
  if (d != "none" && victim.source == "remote") {
    throw std::invalid_argument("defences cannot wrap a remote victim");
  }
  if (attack.family == "square") {
    attack.budget.validate();
  } else if (attack.family == "pgd") {
    attack.white_box.validate();
    if (victim.source == "remote" || d == "ts" || d == "cs") {
      throw std::invalid_argument("white-box attacks need direct access to the network");
    }
  } else {
    throw std::invalid_argument("attack.family must be square or pgd");
  }
  if (subset < 1) throw std::invalid_argument("subset must be positive");
  if (workers < 1) throw std::invalid_argument("workers must be positive");
  if (num_bins < 1) throw std::invalid_argument("num_bins must be positive");
  if (defence.kind == "cs") defence.cs.validate();
}

ExperimentConfig config_from_json(const std::string& text) {
  const json root = json::parse(text);
  ExperimentConfig cfg;
  if (root.contains("dataset")) {
    const auto& j = root.at("dataset");
    auto& d = cfg.dataset;
    read(j, "name", d.name);
    read(j, "source", d.source);
    read(j, "csv_path", d.csv_path);
    read(j, "label_noise", d.label_noise);
    read(j, "classes", d.blobs.classes);
    read(j, "points_per_class", d.blobs.points_per_class);
    read(j, "dim", d.blobs.dim);
    read(j, "separation", d.blobs.separation);
    read(j, "spread", d.blobs.spread);
  }
  if (root.contains("victim")) {
    const auto& j = root.at("victim");
    auto& v = cfg.victim;
    read(j, "source", v.source);
    read(j, "model_path", v.model_path);
    read(j, "sidecar_path", v.sidecar_path);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read(t, "hidden", v.train.hidden);
      read(t, "learning_rate", v.train.learning_rate);
      read(t, "epochs", v.train.epochs);
      read(t, "batch_size", v.train.batch_size);
      read(t, "seed", v.train.seed);
      read(t, "momentum", v.train.momentum);
    }
    if (j.contains("remote")) {
      const auto& r = j.at("remote");
      read(r, "url", v.remote.url);
      read(r, "timeout_ms", v.remote.timeout_ms);
      read(r, "max_retries", v.remote.max_retries);
      read(r, "concurrent", v.remote.concurrent);
    }
  }
  if (root.contains("defence")) {
    const auto& j = root.at("defence");
    read(j, "kind", cfg.defence.kind);
    if (j.contains("cs")) read_cs(j.at("cs"), cfg.defence.cs);
    if (j.contains("caat")) read_white_box(j.at("caat"), cfg.defence.caat);
    if (j.contains("at")) {
      const auto& a = j.at("at");
      read(a, "epsilon", cfg.defence.at.epsilon);
      read(a, "step_size", cfg.defence.at.step_size);
      read(a, "iterations", cfg.defence.at.iterations);
      read(a, "random_start", cfg.defence.at.random_start);
    }
  }
  if (root.contains("attack")) {
    const auto& j = root.at("attack");
    auto& a = cfg.attack;
    if (j.contains("kind")) a.kind = parse_attack_kind(j.at("kind").get<std::string>());
    read(j, "family", a.family);
    if (j.contains("norm")) {
      a.budget.norm = parse_norm(j.at("norm").get<std::string>());
      if (a.budget.norm == Norm::kL2) a.budget = AttackBudget::l2_default();
    }
    read(j, "epsilon", a.budget.epsilon);
    read(j, "patch_fraction", a.budget.patch_fraction);
    read(j, "iterations", a.budget.max_iterations);
    read(j, "stop_loss", a.budget.stop_loss);
    read(j, "rca_tolerance", a.options.rca_tolerance);
    read(j, "underconfidence_guard", a.options.underconfidence_guard);
    read(j, "schedule_horizon", a.options.schedule.horizon);
    read(j, "milestones", a.options.schedule.milestones);
    if (j.contains("grid")) {
      const auto g = j.at("grid").get<std::vector<int>>();
      if (g.size() != 3) throw std::invalid_argument("attack.grid must be [height, width, channels]");
      a.options.grid = GridShape{g[0], g[1], g[2]};
    }
    if (j.contains("white_box")) read_white_box(j.at("white_box"), a.white_box);
  }
  read(root, "seed", cfg.seed);
  read(root, "output_dir", cfg.output_dir);
  read(root, "subset", cfg.subset);
  read(root, "workers", cfg.workers);
  read(root, "num_bins", cfg.num_bins);
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  const auto& d = cfg.dataset;
  root["dataset"] = {{"name", d.name},
                     {"source", d.source},
                     {"csv_path", d.csv_path},
                     {"label_noise", d.label_noise},
                     {"classes", d.blobs.classes},
                     {"points_per_class", d.blobs.points_per_class},
                     {"dim", d.blobs.dim},
                     {"separation", d.blobs.separation},
                     {"spread", d.blobs.spread}};
  const auto& v = cfg.victim;
  root["victim"] = {{"source", v.source},
                    {"model_path", v.model_path},
                    {"sidecar_path", v.sidecar_path},
                    {"train",
                     {{"hidden", v.train.hidden},
                      {"learning_rate", v.train.learning_rate},
                      {"epochs", v.train.epochs},
                      {"batch_size", v.train.batch_size},
                      {"seed", v.train.seed},
                      {"momentum", v.train.momentum}}},
                    {"remote",
                     {{"url", v.remote.url},
                      {"timeout_ms", v.remote.timeout_ms},
                      {"max_retries", v.remote.max_retries},
                      {"concurrent", v.remote.concurrent}}}};
  const auto& cs = cfg.defence.cs;
  root["defence"] = {{"kind", cfg.defence.kind},
                     {"cs",
                      {{"num_bins", cs.num_bins},
                       {"target_bins", cs.target_bins},
                       {"t_min", cs.t_min},
                       {"t_max", cs.t_max},
                       {"grid_points", cs.grid_points},
                       {"tolerance", cs.tolerance}}},
                     {"caat", write_white_box(cfg.defence.caat)},
                     {"at",
                      {{"epsilon", cfg.defence.at.epsilon},
                       {"step_size", cfg.defence.at.step_size},
                       {"iterations", cfg.defence.at.iterations},
                       {"random_start", cfg.defence.at.random_start}}}};
  const auto& a = cfg.attack;
  json attack = {{"kind", std::string(to_string(a.kind))},
                 {"family", a.family},
                 {"norm", std::string(to_string(a.budget.norm))},
                 {"epsilon", a.budget.epsilon},
                 {"patch_fraction", a.budget.patch_fraction},
                 {"iterations", a.budget.max_iterations},
                 {"stop_loss", a.budget.stop_loss},
                 {"rca_tolerance", a.options.rca_tolerance},
                 {"underconfidence_guard", a.options.underconfidence_guard},
                 {"schedule_horizon", a.options.schedule.horizon},
                 {"milestones", a.options.schedule.milestones},
                 {"white_box", write_white_box(a.white_box)}};
  if (a.options.grid) {
    attack["grid"] = {a.options.grid->height, a.options.grid->width, a.options.grid->channels};
  }
  root["attack"] = attack;
  root["seed"] = cfg.seed;
  root["output_dir"] = cfg.output_dir;
  root["subset"] = cfg.subset;
  root["workers"] = cfg.workers;
  root["num_bins"] = cfg.num_bins;
  return root.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Pipeline stages

DataSplits build_splits(const ExperimentConfig& cfg) {
  const SeededRng root(cfg.seed);
  auto seed_for = [&](const char* tag) { return derive_stream(root, tag, 0)(); };
  DataSplits s;
  if (cfg.dataset.source == "blobs") {
    // Splits share one centre layout and differ only in the sampling noise.
    const std::uint64_t layout = seed_for("blobs");
    const BlobSpec& spec = cfg.dataset.blobs;
    s.train = generate_blobs(spec, layout, seed_for("train"));
    s.validation = generate_blobs(spec, layout, seed_for("validation"));
    s.test = generate_blobs(spec, layout, seed_for("test"));
    s.num_classes = spec.classes;
  } else {
    auto all = load_csv(cfg.dataset.csv_path);
    int max_label = 0;
    for (const auto& x : all) max_label = std::max(max_label, x.label);
    s.num_classes = std::max(2, max_label + 1);
    std::vector<std::size_t> perm(all.size());
    std::iota(perm.begin(), perm.end(), 0);
    SeededRng shuffle = derive_stream(root, "split", 0);
    std::shuffle(perm.begin(), perm.end(), shuffle);
    const std::size_t n_train = all.size() * 6 / 10;
    const std::size_t n_val = all.size() * 2 / 10;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.validation : s.test);
      dst.push_back(all[perm[i]]);
    }
  }
  corrupt_labels(s.train, cfg.dataset.label_noise, s.num_classes, seed_for("noise"));
  return s;
}

Mlp build_model(const ExperimentConfig& cfg, const DataSplits& splits) {
  if (cfg.victim.source == "model") return load_mlp(cfg.victim.model_path);
  if (cfg.victim.source != "train") throw std::invalid_argument("no local model for a remote victim");
  TrainConfig train = cfg.victim.train;
  if (train.num_classes == 0) train.num_classes = splits.num_classes;
  if (cfg.defence.kind == "caat") return caat_train(splits.train, train, cfg.defence.caat);
  if (cfg.defence.kind == "at") return adversarial_train(splits.train, train, cfg.defence.at);
  return train_mlp(splits.train, train);
}

DefenceParams fit_defence(const ExperimentConfig& cfg, const Mlp& model, const DataSplits& splits) {
  if (!cfg.victim.sidecar_path.empty()) return load_defence(cfg.victim.sidecar_path);
  DefenceParams params;
  if (cfg.defence.kind == "ts") {
    std::vector<Vector> logits;
    std::vector<int> labels;
    for (const auto& s : splits.validation) {
      logits.push_back(model.logits(s.features));
      labels.push_back(s.label);
    }
    params.kind = "ts";
    params.ts = fit_temperature(logits, labels);
  } else if (cfg.defence.kind == "cs") {
    params.kind = "cs";
    params.cs = cfg.defence.cs;
  }
  return params;
}

SummaryRow summary_from_traces(std::span<const AttackTrace> traces, int num_bins) {
  std::vector<PredictionRecord> pre;
  std::vector<PredictionRecord> post;
  for (const auto& t : traces) {
    if (!t.ok()) continue;
    pre.push_back(t.pre_record());
    post.push_back(t.post_record());
  }
  return summary(pre, post, num_bins);
}

void label_summary(SummaryRow& row, const ExperimentConfig& cfg) {
  row.dataset = cfg.dataset.name;
  row.kind = std::string(to_string(cfg.attack.kind));
  if (cfg.attack.family == "pgd") {
    row.norm = "linf";
    row.epsilon = cfg.attack.white_box.epsilon;
    row.iterations = cfg.attack.white_box.iterations;
  } else {
    row.norm = std::string(to_string(cfg.attack.budget.norm));
    row.epsilon = cfg.attack.budget.epsilon;
    row.iterations = cfg.attack.budget.max_iterations;
  }
  row.seed = cfg.seed;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
  stage("config", [&] { cfg.validate(); });
  RunReport report;
  report.config_json = config_to_json(cfg);

  const DataSplits splits = stage("data", [&] { return build_splits(cfg); });
  if (splits.test.empty()) throw StageError("data", "empty test split");
  const int dim = static_cast<int>(splits.test.front().features.size());

  std::shared_ptr<const Mlp> model;
  std::shared_ptr<const ClassifierOracle> oracle;
  stage("victim", [&] {
    if (cfg.victim.source == "remote") {
      oracle = std::make_shared<RemoteOracle>(cfg.victim.remote, dim, splits.num_classes,
                                              [](const std::string& msg) {
                                                std::cerr << "calattack: " << msg << "\n";
                                              });
      return;
    }
    model = std::make_shared<const Mlp>(build_model(cfg, splits));
    if (model->input_dim() != dim) {
      throw std::runtime_error("model expects " + std::to_string(model->input_dim()) +
                               " features, data has " + std::to_string(dim));
    }
    report.victim_accuracy = accuracy(Victim(*model), splits.test);
  });

  stage("defence", [&] {
    if (!model) return;
    const DefenceParams params = fit_defence(cfg, *model, splits);
    if (params.kind == "ts") {
      oracle = std::make_shared<TemperatureOracle>(model, params.ts);
    } else if (params.kind == "cs") {
      oracle = std::make_shared<CompressionOracle>(model, params.cs);
    } else {
      oracle = std::make_shared<VictimOracle>(std::make_shared<const Victim>(*model));
    }
  });

  stage("attack", [&] {
    if (cfg.subset > splits.test.size()) {
      throw std::invalid_argument("subset " + std::to_string(cfg.subset) + " exceeds test split of " +
                                  std::to_string(splits.test.size()));
    }
    const SeededRng root(cfg.seed);
    report.subset_indices = draw_subset(splits.test.size(), cfg.subset, derive_stream(root, "eval", 0)());
    std::vector<Sample> chosen;
    chosen.reserve(report.subset_indices.size());
    for (auto i : report.subset_indices) chosen.push_back(splits.test[i]);

    AttackSpec spec;
    if (cfg.attack.family == "pgd") {
      spec = PgdAttackSpec{cfg.attack.white_box, cfg.attack.options};
    } else {
      spec = SquareAttackSpec{cfg.attack.budget, cfg.attack.options};
    }
    report.attack = attack_dataset(*oracle, chosen, cfg.attack.kind, spec,
                                   derive_stream(root, "attacks", 0), cfg.workers);
    for (auto& t : report.attack.traces) t.sample_index = report.subset_indices[t.sample_index];
  });

  stage("report", [&] {
    if (report.attack.pre.empty()) throw std::runtime_error("every sample failed; nothing to report");
    SummaryRow row = summary(report.attack.pre, report.attack.post, cfg.num_bins);
    label_summary(row, cfg);
    report.summary = row;
    report.bins_pre = reliability_bins(report.attack.pre, cfg.num_bins);
    report.bins_post = reliability_bins(report.attack.post, cfg.num_bins);

    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    report.trace_path = (dir / "traces.jsonl").string();
    report.summary_path = (dir / "summary.csv").string();
    report.svg_path = (dir / "reliability.svg").string();

    std::ostringstream traces;
    write_traces(traces, report.attack.traces);
    write_file(report.trace_path, traces.str());

    std::ostringstream csv;
    csv << summary_csv_header() << "\n";
    write_summary_csv_row(csv, row);
    write_file(report.summary_path, csv.str());

    write_file(dir / "reliability.json", bins_to_json(report.bins_pre, report.bins_post));
    emit_reliability_svg(report.bins_pre, report.bins_post, report.svg_path);
    write_file(dir / "config.json", report.config_json);

    std::size_t failed = 0;
    for (const auto& t : report.attack.traces) failed += t.ok() ? 0 : 1;
    json meta = {{"created_utc", utc_timestamp()},
                 {"samples", report.attack.traces.size()},
                 {"failed_samples", failed}};
    if (model) meta["victim_test_accuracy"] = report.victim_accuracy;
    if (const auto* remote = dynamic_cast<const RemoteOracle*>(oracle.get())) {
      meta["remote_retries"] = remote->retry_count();
    }
    write_file(dir / "metadata.json", meta.dump(2) + "\n");
  });
  return report;
}

}  // namespace calattack
