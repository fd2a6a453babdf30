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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace calattack {

using Vector = std::vector<double>;

// One labelled input. Features live in [0,1]^d.
struct Sample {
  Vector features;
  int label = 0;
};

void validate_sample(const Sample& sample, int num_classes);

// Point on the K-simplex produced by a classifier for one input.
class ProbVector {
 public:
  // Sum tolerance for acceptance; deviations below it are renormalised away.
  static constexpr double kSumTolerance = 1e-6;

  ProbVector() = default;
  explicit ProbVector(Vector probs);

  static ProbVector uniform(int num_classes);
  static ProbVector softmax(std::span<const double> logits);

  std::span<const double> values() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  int size() const { return static_cast<int>(probs_.size()); }

  // Lowest index wins ties.
  int argmax() const;
  double confidence() const { return probs_[static_cast<std::size_t>(argmax())]; }
  // Largest probability among classes other than `k`.
  double max_excluding(int k) const;
  int argmax_excluding(int k) const;

 private:
  Vector probs_;
};

struct PredictionRecord {
  int true_label = 0;
  int predicted_label = 0;
  double confidence = 0.0;
  std::uint64_t queries_used = 0;

  bool correct() const { return true_label == predicted_label; }
};

enum class Norm { kLinf, kL2 };

std::string_view to_string(Norm norm);
Norm parse_norm(std::string_view text);

struct AttackBudget {
  Norm norm = Norm::kLinf;
  double epsilon = 0.05;
  double patch_fraction = 0.05;
  int max_iterations = 1000;
  double stop_loss = 0.01;

  void validate() const;

  static AttackBudget linf_default() { return {}; }
  static AttackBudget l2_default() { return {Norm::kL2, 5.0, 0.1, 1000, 0.01}; }
};

// Scalar objectives whose input gradient a white-box oracle can provide.
enum class ObjectiveKind { kUnderconfidence, kOverconfidence, kCrossEntropy };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::kCrossEntropy;
  // Predicted class for the calibration losses, true label for cross-entropy.
  int class_index = 0;
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view text);

// Raised by oracles that cannot answer (timeouts, exhausted retries). Attack drivers record it
// per sample instead of aborting the whole run.
class OracleUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Black-box victim. Every predict() call is one query.
class ClassifierOracle {
 public:
  virtual ~ClassifierOracle() = default;

  ProbVector predict(std::span<const double> features) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return do_predict(features);
  }

  std::uint64_t query_count() const { return queries_.load(std::memory_order_relaxed); }

  virtual int input_dim() const = 0;
  virtual int num_classes() const = 0;
  // Serial oracles are never called from more than one worker.
  virtual bool concurrent() const { return true; }

 protected:
  virtual ProbVector do_predict(std::span<const double> features) const = 0;
  void count_query() const { queries_.fetch_add(1, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> queries_{0};
};

class GradientOracle : public ClassifierOracle {
 public:
  // Gradient of the objective w.r.t. the input; counts as one query.
  Vector input_gradient(std::span<const double> features, const Objective& objective) const {
    count_query();
    return do_input_gradient(features, objective);
  }

 protected:
  virtual Vector do_input_gradient(std::span<const double> features,
                                   const Objective& objective) const = 0;
};

// Counter-based stream: the state depends only on (seed, tag, index).
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t master_seed = 0);

  std::uint64_t master_seed() const { return master_seed_; }

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  bool coin();

 private:
  std::uint64_t master_seed_;
  std::mt19937_64 engine_;
};

SeededRng derive_stream(const SeededRng& rng, std::string_view tag, std::uint64_t index);

// Projects `candidate` into the epsilon ball around `original` and then into [0,1]^d.
Vector clip_to_ball(std::span<const double> original, std::span<const double> candidate,
                    const AttackBudget& budget);
Vector clip_to_ball(const Sample& original, std::span<const double> candidate,
                    const AttackBudget& budget);

double linf_distance(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);
double distance(Norm norm, std::span<const double> a, std::span<const double> b);

void require_same_dim(std::size_t a, std::size_t b, const char* what);

}  // namespace calattack
