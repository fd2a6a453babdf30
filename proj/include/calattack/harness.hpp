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

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calattack/attacks.hpp"
#include "calattack/defences.hpp"
#include "calattack/metrics.hpp"
#include "calattack/victims.hpp"

namespace httplib {
class Server;
}

namespace calattack {

// ---------------------------------------------------------------------------
// Data

struct BlobSpec {
  int classes = 4;
  int points_per_class = 300;
  int dim = 16;
  // Distance from every class centre to the middle of the cube, in units of `spread`.
  double separation = 4.0;
  double spread = 0.05;  // per-coordinate standard deviation
};

// Gaussian clusters with centres on a circle through the cube centre, clipped to [0,1]^d.
std::vector<Sample> generate_blobs(const BlobSpec& spec, std::uint64_t seed);
// Centres from `layout_seed`, per-point noise from `noise_seed`.
std::vector<Sample> generate_blobs(const BlobSpec& spec, std::uint64_t layout_seed,
                                   std::uint64_t noise_seed);

// Rows of d features followed by an integer label; no header.
std::vector<Sample> load_csv(const std::string& path);
std::vector<Sample> parse_csv(std::istream& in, const std::string& source = "<stream>");

// Replaces `fraction` of the labels with a different class, chosen by the seed.
void corrupt_labels(std::vector<Sample>& samples, double fraction, int num_classes,
                    std::uint64_t seed);

// Seeded uniform draw without replacement, returned in ascending index order.
std::vector<std::size_t> draw_subset(std::size_t population, std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Remote victim over HTTP: POST {"features": [...]} -> {"probs": [...]}

struct RemoteSettings {
  std::string url;  // e.g. http://127.0.0.1:8080/predict
  int timeout_ms = 2000;
  int max_retries = 2;
  bool concurrent = false;
};

class RemoteOracle final : public ClassifierOracle {
 public:
  using Logger = std::function<void(const std::string&)>;

  RemoteOracle(RemoteSettings settings, int input_dim, int num_classes, Logger log = {});
  ~RemoteOracle() override;

  int input_dim() const override { return input_dim_; }
  int num_classes() const override { return num_classes_; }
  bool concurrent() const override { return settings_.concurrent; }
  std::uint64_t retry_count() const { return retries_.load(); }

 protected:
  ProbVector do_predict(std::span<const double> features) const override;

 private:
  struct Endpoint;
  RemoteSettings settings_;
  int input_dim_;
  int num_classes_;
  Logger log_;
  std::unique_ptr<Endpoint> endpoint_;
  mutable std::atomic<std::uint64_t> retries_{0};
};

// Serves `oracle` at POST /predict on `server`.
void register_predict_endpoint(httplib::Server& server, const ClassifierOracle& oracle);

// ---------------------------------------------------------------------------
// Experiments

struct DatasetConfig {
  std::string name = "blobs";
  std::string source = "blobs";  // blobs | csv
  BlobSpec blobs;
  std::string csv_path;
  double label_noise = 0.0;  // applied to training labels only
};

struct VictimConfig {
  std::string source = "train";  // train | model | remote
  TrainConfig train;
  std::string model_path;
  std::string sidecar_path;  // optional fitted defence for a stored model
  RemoteSettings remote;
};

struct DefenceConfig {
  std::string kind = "none";  // none | ts | cs | caat | at
  CSConfig cs;
  WhiteBoxSettings caat;
  PgdTrainSettings at;
};

struct AttackConfig {
  AttackKind kind = AttackKind::kMMA;
  std::string family = "square";  // square | pgd
  AttackBudget budget;
  WhiteBoxSettings white_box;
  AttackOptions options;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  VictimConfig victim;
  DefenceConfig defence;
  AttackConfig attack;
  std::uint64_t seed = 0;
  std::string output_dir = "calattack-out";
  std::size_t subset = 500;
  int workers = 1;
  int num_bins = kDefaultBins;

  void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

struct DataSplits {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  int num_classes = 0;
};

DataSplits build_splits(const ExperimentConfig& cfg);

// Trains (with the training-time defence, if any) the victim described by the config.
Mlp build_model(const ExperimentConfig& cfg, const DataSplits& splits);
// Fits the post-hoc defence (ts/cs) on clean validation data.
DefenceParams fit_defence(const ExperimentConfig& cfg, const Mlp& model, const DataSplits& splits);

struct RunReport {
  std::string config_json;
  std::string trace_path;
  std::string summary_path;
  std::string svg_path;
  SummaryRow summary;
  ReliabilityBins bins_pre;
  ReliabilityBins bins_post;
  DatasetAttack attack;
  std::vector<std::size_t> subset_indices;
  double victim_accuracy = 0.0;  // on the full test split, undefended argmax; 0 for remote victims
};

// Runs the full pipeline and writes traces.jsonl, summary.csv, reliability.json,
// reliability.svg, config.json and metadata.json under cfg.output_dir.
RunReport run_experiment(const ExperimentConfig& cfg);

// Summary recomputed from a trace log.
SummaryRow summary_from_traces(std::span<const AttackTrace> traces, int num_bins);
// Fills the descriptive columns (dataset, kind, norm, epsilon, iterations, seed).
void label_summary(SummaryRow& row, const ExperimentConfig& cfg);

// Two-panel (before / after) reliability diagram as standalone SVG.
std::string reliability_svg(const ReliabilityBins& pre, const ReliabilityBins& post);
void emit_reliability_svg(const ReliabilityBins& pre, const ReliabilityBins& post,
                          const std::string& path);

std::string bins_to_json(const ReliabilityBins& pre, const ReliabilityBins& post);

// Error tagged with the pipeline stage that produced it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace calattack
