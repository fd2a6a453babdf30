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
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "calattack/core.hpp"

namespace calattack {

// Fully connected ReLU network with a softmax head.
class Mlp {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    Vector weights;  // out x in, row-major
    Vector bias;

    bool operator==(const Layer&) const = default;
  };

  Mlp() = default;
  // Zero-initialised parameters; layer_sizes = {d, h1, ..., K}.
  explicit Mlp(std::vector<int> layer_sizes);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static Mlp initialized(std::vector<int> layer_sizes, SeededRng& rng);

  int input_dim() const { return sizes_.front(); }
  int num_classes() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  std::size_t parameter_count() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Vector logits(std::span<const double> x) const;
  ProbVector predict_proba(std::span<const double> x) const;
  Vector input_gradient(std::span<const double> x, const Objective& objective) const;

  // Adds weight * d(cross-entropy at `label`)/d(params) into `grad` (same shape); returns the loss.
  double accumulate_gradient(std::span<const double> x, int label, double weight, Mlp& grad) const;

  bool operator==(const Mlp&) const = default;

 private:
  struct Activations {
    std::vector<Vector> pre;   // per layer, before ReLU
    std::vector<Vector> post;  // post[0] = input, post[l+1] = output of layer l
  };
  Activations forward(std::span<const double> x) const;
  // Back-propagates d(objective)/d(logits); accumulates parameter gradients when grad != nullptr.
  Vector backward(const Activations& acts, Vector dlogits, double weight, Mlp* grad) const;

  std::vector<int> sizes_;
  std::vector<Layer> layers_;
};

// d(objective)/d(logits) for a softmax head; shared by every differentiable victim.
Vector objective_logit_gradient(const ProbVector& probs, const Objective& objective);
double objective_value(const ProbVector& probs, const Objective& objective);

// Scripted classifier: a regular grid over [0,1]^d with an explicit output per cell.
class LookupVictim {
 public:
  LookupVictim(int input_dim, int cells_per_dim, ProbVector fallback);

  static LookupVictim constant(int input_dim, ProbVector output) {
    return LookupVictim(input_dim, 1, std::move(output));
  }

  void set_cell(std::vector<int> cell, ProbVector output);
  std::vector<int> cell_of(std::span<const double> x) const;

  int input_dim() const { return input_dim_; }
  int num_classes() const { return fallback_.size(); }
  ProbVector predict_proba(std::span<const double> x) const;

 private:
  int input_dim_;
  int cells_per_dim_;
  ProbVector fallback_;
  std::map<std::vector<int>, ProbVector> table_;
};

using Victim = std::variant<Mlp, LookupVictim>;

int input_dim(const Victim& victim);
int num_classes(const Victim& victim);
ProbVector predict_proba(const Victim& victim, std::span<const double> features);
// Only differentiable victims support gradients; LookupVictim throws.
Vector input_gradient(const Victim& victim, std::span<const double> features,
                      const Objective& objective);

// Oracle view over a shared, immutable victim.
class VictimOracle final : public GradientOracle {
 public:
  explicit VictimOracle(std::shared_ptr<const Victim> victim) : victim_(std::move(victim)) {}
  explicit VictimOracle(Victim victim)
      : victim_(std::make_shared<const Victim>(std::move(victim))) {}

  const Victim& victim() const { return *victim_; }
  int input_dim() const override { return calattack::input_dim(*victim_); }
  int num_classes() const override { return calattack::num_classes(*victim_); }

 protected:
  ProbVector do_predict(std::span<const double> x) const override {
    return calattack::predict_proba(*victim_, x);
  }
  Vector do_input_gradient(std::span<const double> x, const Objective& objective) const override {
    return calattack::input_gradient(*victim_, x, objective);
  }

 private:
  std::shared_ptr<const Victim> victim_;
};

struct TrainConfig {
  std::vector<int> hidden = {32, 32};
  double learning_rate = 0.05;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  // 0 infers K from the largest label.
  int num_classes = 0;

  void validate() const;
};

// Produces the examples actually trained on for one clean minibatch, given the current model.
using BatchTransform =
    std::function<std::vector<Sample>(const Mlp& current, std::span<const Sample> batch,
                                      SeededRng& rng)>;

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean loss over each epoch's batches
};

Mlp train_mlp(std::span<const Sample> dataset, const TrainConfig& cfg,
              TrainHistory* history = nullptr);
// Loss per batch is the summed cross-entropy of the transformed examples divided by the clean
// batch size.
Mlp train_mlp(std::span<const Sample> dataset, const TrainConfig& cfg,
              const BatchTransform& transform, TrainHistory* history = nullptr);

double accuracy(const Victim& victim, std::span<const Sample> dataset);

// Versioned text format with hexadecimal floats; round-trips bit-exactly.
void save_mlp(const Mlp& model, std::ostream& out);
Mlp load_mlp(std::istream& in);
void save_mlp(const Mlp& model, const std::string& path);
Mlp load_mlp(const std::string& path);

}  // namespace calattack
