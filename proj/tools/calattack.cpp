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

// calattack: train victims, fit defences, run calibration attacks, rebuild reports, serve models.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "calattack/harness.hpp"
#include "httplib.h"

namespace fs = std::filesystem;
using namespace calattack;

namespace {

// Flags that override fields of the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> kind;
  std::optional<std::string> family;
  std::optional<std::string> norm;
  std::optional<double> epsilon;
  std::optional<int> iterations;
  std::optional<std::size_t> subset;
  std::optional<int> workers;
  std::optional<std::string> defence;
  std::optional<std::string> model;
  std::optional<std::string> sidecar;
  std::optional<std::string> remote_url;
  std::optional<std::string> csv;
  std::optional<double> label_noise;
  std::optional<int> epochs;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "experiment config (JSON)");
    app->add_option("--seed", seed, "master seed");
    app->add_option("-o,--out-dir", output_dir, "output directory");
    app->add_option("--kind", kind, "attack kind: uca | oca | mma | rca");
    app->add_option("--family", family, "attack family: square | pgd");
    app->add_option("--norm", norm, "square-search norm: linf | l2");
    app->add_option("--epsilon", epsilon, "perturbation budget");
    app->add_option("--iterations", iterations, "attack iterations");
    app->add_option("--subset", subset, "number of test samples to attack");
    app->add_option("--workers", workers, "attack worker threads");
    app->add_option("--defence", defence, "none | ts | cs | caat | at");
    app->add_option("--model", model, "load the victim from a model file");
    app->add_option("--sidecar", sidecar, "fitted defence file for --model");
    app->add_option("--remote", remote_url, "remote victim URL, e.g. http://host:port/predict");
    app->add_option("--csv", csv, "CSV dataset (features in [0,1], integer label last)");
    app->add_option("--label-noise", label_noise, "fraction of corrupted training labels");
    app->add_option("--epochs", epochs, "training epochs");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (output_dir) cfg.output_dir = *output_dir;
    if (kind) cfg.attack.kind = parse_attack_kind(*kind);
    if (family) cfg.attack.family = *family;
    if (norm) {
      const Norm n = parse_norm(*norm);
      if (n != cfg.attack.budget.norm) {
        cfg.attack.budget = n == Norm::kL2 ? AttackBudget::l2_default() : AttackBudget::linf_default();
      }
    }
    if (epsilon) {
      cfg.attack.budget.epsilon = *epsilon;
      cfg.attack.white_box.epsilon = *epsilon;
    }
    if (iterations) {
      cfg.attack.budget.max_iterations = *iterations;
      cfg.attack.white_box.iterations = *iterations;
    }
    if (subset) cfg.subset = *subset;
    if (workers) cfg.workers = *workers;
    if (defence) cfg.defence.kind = *defence;
    if (model) {
      cfg.victim.source = "model";
      cfg.victim.model_path = *model;
    }
    if (sidecar) cfg.victim.sidecar_path = *sidecar;
    if (remote_url) {
      cfg.victim.source = "remote";
      cfg.victim.remote.url = *remote_url;
    }
    if (csv) {
      cfg.dataset.source = "csv";
      cfg.dataset.csv_path = *csv;
      if (cfg.dataset.name == "blobs") cfg.dataset.name = fs::path(*csv).stem().string();
    }
    if (label_noise) cfg.dataset.label_noise = *label_noise;
    if (epochs) cfg.victim.train.epochs = *epochs;
    return cfg;
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void print_row(const SummaryRow& row) {
  std::cout << summary_csv_header() << '\n';
  write_summary_csv_row(std::cout, row);
}

int cmd_train(const Overrides& ov, const std::string& model_out) {
  ExperimentConfig cfg = ov.resolve();
  cfg.victim.source = "train";
  const DataSplits splits = build_splits(cfg);
  const Mlp model = build_model(cfg, splits);
  save_mlp(model, model_out);
  std::cout << "model: " << model_out << '\n'
            << "test accuracy: " << accuracy(Victim(model), splits.test) << '\n';
  return 0;
}

int cmd_defend(const Overrides& ov, const std::string& sidecar_out) {
  const ExperimentConfig cfg = ov.resolve();
  if (cfg.defence.kind != "ts" && cfg.defence.kind != "cs") {
    throw std::invalid_argument("defend fits post-hoc defences only (--defence ts | cs)");
  }
  if (cfg.victim.source != "model") throw std::invalid_argument("defend needs --model");
  const DataSplits splits = build_splits(cfg);
  const Mlp model = load_mlp(cfg.victim.model_path);
  ExperimentConfig fit_cfg = cfg;
  fit_cfg.victim.sidecar_path.clear();
  const DefenceParams params = fit_defence(fit_cfg, model, splits);
  save_defence(params, sidecar_out);
  std::cout << "defence: " << params.kind << " -> " << sidecar_out << '\n';
  if (params.kind == "ts") std::cout << "temperature: " << params.ts.temperature << '\n';
  return 0;
}

int cmd_attack(const Overrides& ov) {
  const ExperimentConfig cfg = ov.resolve();
  const RunReport report = run_experiment(cfg);
  print_row(report.summary);
  std::cerr << "traces: " << report.trace_path << "\nsummary: " << report.summary_path
            << "\ndiagram: " << report.svg_path << '\n';
  return 0;
}

// Rebuilds summary and diagram from a run directory and checks them against the stored ones.
int cmd_report(const std::string& dir_arg, bool write) {
  const fs::path dir(dir_arg);
  const ExperimentConfig cfg = config_from_json(read_file(dir / "config.json"));
  std::vector<AttackTrace> traces;
  try {
    std::istringstream in(read_file(dir / "traces.jsonl"));
    traces = read_traces(in);
  } catch (const std::exception& e) {
    throw StageError("report", e.what());
  }
  SummaryRow row = summary_from_traces(traces, cfg.num_bins);
  label_summary(row, cfg);

  std::vector<PredictionRecord> pre;
  std::vector<PredictionRecord> post;
  for (const auto& t : traces) {
    if (!t.ok()) continue;
    pre.push_back(t.pre_record());
    post.push_back(t.post_record());
  }
  const auto bins_pre = reliability_bins(pre, cfg.num_bins);
  const auto bins_post = reliability_bins(post, cfg.num_bins);

  std::ostringstream csv;
  csv << summary_csv_header() << '\n';
  write_summary_csv_row(csv, row);
  const std::string svg = reliability_svg(bins_pre, bins_post);
  print_row(row);

  if (write) {
    std::ofstream(dir / "summary.csv", std::ios::binary) << csv.str();
    std::ofstream(dir / "reliability.svg", std::ios::binary) << svg;
    std::ofstream(dir / "reliability.json", std::ios::binary) << bins_to_json(bins_pre, bins_post);
    return 0;
  }
  int status = 0;
  auto check = [&](const char* name, const std::string& expected) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) return;
    const bool same = read_file(p) == expected;
    std::cerr << name << ": " << (same ? "matches traces" : "DIFFERS from traces") << '\n';
    if (!same) status = 1;
  };
  check("summary.csv", csv.str());
  check("reliability.svg", svg);
  check("reliability.json", bins_to_json(bins_pre, bins_post));
  return status;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& model_path, const std::string& sidecar, const std::string& host,
              int port) {
  auto model = std::make_shared<const Mlp>(load_mlp(model_path));
  std::unique_ptr<ClassifierOracle> oracle;
  const DefenceParams params = sidecar.empty() ? DefenceParams{} : load_defence(sidecar);
  if (params.kind == "ts") {
    oracle = std::make_unique<TemperatureOracle>(model, params.ts);
  } else if (params.kind == "cs") {
    oracle = std::make_unique<CompressionOracle>(model, params.cs);
  } else {
    oracle = std::make_unique<VictimOracle>(Victim(*model));
  }
  httplib::Server server;
  register_predict_endpoint(server, *oracle);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << model_path << " on http://" << host << ':' << port << "/predict\n";
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on port " + std::to_string(port));
  std::cerr << "served " << oracle->query_count() << " queries\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calattack: calibration attacks and defences on toy classifiers"};
  app.require_subcommand(1);

  Overrides ov;
  std::string model_out = "model.txt";
  std::string sidecar_out = "defence.json";
  std::string report_dir;
  bool report_write = false;
  std::string serve_model;
  std::string serve_sidecar;
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;

  auto* train = app.add_subcommand("train", "train a victim (with caat/at if requested) and save it");
  ov.attach(train);
  train->add_option("--model-out", model_out, "where to write the model")->capture_default_str();

  auto* defend = app.add_subcommand("defend", "fit a post-hoc defence (ts | cs) for a saved model");
  ov.attach(defend);
  defend->add_option("--sidecar-out", sidecar_out, "where to write the fitted defence")
      ->capture_default_str();

  auto* attack = app.add_subcommand("attack", "run an attack experiment and write its artifacts");
  ov.attach(attack);

  auto* report = app.add_subcommand("report", "recompute summary and diagrams from a run directory");
  report->add_option("dir", report_dir, "run output directory")->required();
  report->add_flag("--write", report_write, "overwrite the stored artifacts instead of checking them");

  auto* config = app.add_subcommand("config", "print the effective config as JSON");
  ov.attach(config);

  auto* serve = app.add_subcommand("serve", "serve a saved model at POST /predict");
  serve->add_option("--model", serve_model, "model file")->required();
  serve->add_option("--sidecar", serve_sidecar, "fitted defence file");
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(ov, model_out);
    if (*defend) return cmd_defend(ov, sidecar_out);
    if (*attack) return cmd_attack(ov);
    if (*report) return cmd_report(report_dir, report_write);
    if (*config) {
      std::cout << config_to_json(ov.resolve());
      return 0;
    }
    if (*serve) return cmd_serve(serve_model, serve_sidecar, serve_host, serve_port);
  } catch (const StageError& e) {
    std::cerr << "calattack: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    const std::string stage = *train ? "train" : *defend ? "defence" : *report ? "report" : "config";
    std::cerr << "calattack: [" << stage << "] " << e.what() << '\n';
    return 2;
  }
  return 0;
}
