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

#include <memory>
#include <string>

#include "calattack/attacks.hpp"
#include "calattack/core.hpp"
#include "calattack/victims.hpp"

namespace calattack {

// softmax(logits / T)
ProbVector temper(std::span<const double> logits, double temperature);

struct TemperatureModel {
  double temperature = 1.0;

  ProbVector apply(std::span<const double> logits) const { return temper(logits, temperature); }
};

double mean_nll(std::span<const Vector> logits, std::span<const int> labels, double temperature);

// Minimises validation NLL over T in [t_min, t_max]; never returns a T worse than T = 1.
TemperatureModel fit_temperature(std::span<const Vector> logits, std::span<const int> labels,
                                 double t_min = 0.05, double t_max = 20.0, double tol = 1e-4);

// Compression scaling: confidences in each of num_bins equal bins are remapped, order-preserving,
// into the top target_bins bins, and a per-input temperature realises the new confidence.
struct CSConfig {
  int num_bins = 15;
  int target_bins = 3;
  double t_min = 0.01;
  double t_max = 100.0;
  int grid_points = 400;
  double tolerance = 1e-4;

  void validate() const;
};

// Where a confidence lands: its source bin and the slice of the target bin reserved for it.
struct CompressionSlot {
  int source_bin = 1;  // 1-based
  int target_bin = 1;  // 1-based
  double source_lower = 0.0;
  double source_upper = 0.0;
  double slot_lower = 0.0;
  double slot_upper = 0.0;
};

CompressionSlot compression_slot(double confidence, const CSConfig& cfg);
// minconf(b') + (p - minconf(b)) / range(b) * range(b')
double compressed_confidence(double confidence, const CSConfig& cfg);

struct CompressionResult {
  ProbVector probs;
  double temperature = 1.0;
  double target = 0.0;
  bool converged = false;
};

CompressionResult compression_scale(std::span<const double> logits, const CSConfig& cfg);

// Post-hoc defences wrap a network's logits; gradients are not exposed.
class TemperatureOracle final : public ClassifierOracle {
 public:
  TemperatureOracle(std::shared_ptr<const Mlp> model, TemperatureModel ts)
      : model_(std::move(model)), ts_(ts) {}
  int input_dim() const override { return model_->input_dim(); }
  int num_classes() const override { return model_->num_classes(); }

 protected:
  ProbVector do_predict(std::span<const double> x) const override {
    return ts_.apply(model_->logits(x));
  }

 private:
  std::shared_ptr<const Mlp> model_;
  TemperatureModel ts_;
};

class CompressionOracle final : public ClassifierOracle {
 public:
  CompressionOracle(std::shared_ptr<const Mlp> model, CSConfig cfg)
      : model_(std::move(model)), cfg_(cfg) {
    cfg_.validate();
  }
  int input_dim() const override { return model_->input_dim(); }
  int num_classes() const override { return model_->num_classes(); }

 protected:
  ProbVector do_predict(std::span<const double> x) const override {
    return compression_scale(model_->logits(x), cfg_).probs;
  }

 private:
  std::shared_ptr<const Mlp> model_;
  CSConfig cfg_;
};

// Trains on label-preserving under- and overconfidence PGD copies of every minibatch; clean
// examples are not used.
Mlp caat_train(std::span<const Sample> dataset, const TrainConfig& cfg, const WhiteBoxSettings& wb,
               TrainHistory* history = nullptr);

struct PgdTrainSettings {
  double epsilon = 0.1;
  double step_size = 0.1 * 0.01 / 0.3;  // relative step 0.01/0.3 of epsilon
  int iterations = 15;
  bool random_start = true;

  void validate() const;
};

// Cross-entropy-maximising PGD within the Linf ball (labels may flip).
Vector pgd_cross_entropy(const Mlp& model, const Sample& sample, const PgdTrainSettings& pgd,
                         SeededRng& rng);

Mlp adversarial_train(std::span<const Sample> dataset, const TrainConfig& cfg,
                      const PgdTrainSettings& pgd, TrainHistory* history = nullptr);

// Fitted post-hoc defence parameters, stored as a JSON sidecar next to the model file.
struct DefenceParams {
  std::string kind = "none";  // none | ts | cs
  TemperatureModel ts;
  CSConfig cs;
};

void save_defence(const DefenceParams& params, const std::string& path);
DefenceParams load_defence(const std::string& path);
std::string defence_to_json(const DefenceParams& params);
DefenceParams defence_from_json(const std::string& text);

}  // namespace calattack
