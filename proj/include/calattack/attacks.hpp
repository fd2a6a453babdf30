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

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "calattack/core.hpp"

namespace calattack {

enum class AttackKind { kUCA, kOCA, kMMA, kRCA };
// The effective per-sample goal every attack kind resolves to.
enum class Direction { kUnder, kOver };

std::string_view to_string(AttackKind kind);
std::string_view to_string(Direction direction);
AttackKind parse_attack_kind(std::string_view text);
Direction parse_direction(std::string_view text);

// Layout of the flat feature vector as an image, index = (row * width + col) * channels + ch.
struct GridShape {
  int height = 1;
  int width = 1;
  int channels = 1;

  static GridShape flat(int dim) { return {1, dim, 1}; }
  int size() const { return height * width * channels; }
};

// Piecewise halving of the patch fraction used by square search.
struct SquareSchedule {
  std::vector<int> milestones = {10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000};
  // When > 0 the iteration is first rescaled as it * 10000 / horizon.
  int horizon = 0;

  double fraction(double p_init, int iteration) const;
};

struct AttackOptions {
  std::optional<GridShape> grid;  // defaults to a 1 x d x 1 layout
  SquareSchedule schedule;
  double rca_tolerance = 0.01;
  // Extra stop: confidence at or past this value in the attack direction.
  std::optional<double> confidence_goal;
  // Redraws of the window signs when a proposal would leave the iterate unchanged.
  int resample_attempts = 10;
  // Under-direction candidates must also strictly lower the predicted-class probability.
  // Off reproduces the bare loss-decrease rule.
  bool underconfidence_guard = true;
};

struct WhiteBoxSettings {
  double epsilon = 0.05;
  double step_size = 5.0 / 255.0;
  int iterations = 10;
  double keep_under = 0.05;  // dropout 0.95
  double keep_over = 0.8;    // dropout 0.2
  double stop_loss = 0.01;

  void validate() const;
};

struct AttackTrace {
  std::size_t sample_index = 0;
  AttackKind kind = AttackKind::kUCA;
  Direction direction = Direction::kUnder;
  std::optional<double> rca_target;
  Norm norm = Norm::kLinf;
  int true_label = 0;
  Vector adversarial_features;
  double pre_confidence = 0.0;
  double post_confidence = 0.0;
  int pre_label = 0;
  int post_label = 0;
  std::uint64_t queries_used = 0;
  int accepted_updates = 0;
  std::vector<double> accepted_losses;  // initial loss, then one entry per accepted update
  double perturbation_norm = 0.0;
  std::string error;  // non-empty when the oracle failed for this sample

  bool ok() const { return error.empty(); }
  PredictionRecord pre_record() const { return {true_label, pre_label, pre_confidence, 0}; }
  PredictionRecord post_record() const {
    return {true_label, post_label, post_confidence, queries_used};
  }
};

// UCA: p_k - max_{j != k} p_j.  OCA: 1 - p_k.
double miscalibration_loss(const ProbVector& probs, int k, Direction direction);

struct ResolvedDirection {
  Direction direction = Direction::kUnder;
  std::optional<double> rca_target;
};

ResolvedDirection resolve_direction(AttackKind kind, int true_label, int predicted_label,
                                    double confidence, int num_classes, SeededRng& rng);

int square_side(double fraction, const GridShape& grid);

Vector square_perturb(std::span<const double> current, const Sample& original,
                      const AttackBudget& budget, int iteration, SeededRng& rng,
                      const AttackOptions& options = {});

// Black-box random square search with label-preserving greedy acceptance.
AttackTrace calibration_attack(const ClassifierOracle& oracle, const Sample& sample,
                               AttackKind kind, const AttackBudget& budget, SeededRng& rng,
                               const AttackOptions& options = {});

// White-box signed-gradient variant with a random keep-mask on every update.
AttackTrace pgd_calibration_attack(const GradientOracle& oracle, const Sample& sample,
                                   AttackKind kind, const WhiteBoxSettings& settings,
                                   SeededRng& rng, const AttackOptions& options = {});

struct SquareAttackSpec {
  AttackBudget budget;
  AttackOptions options;
};

struct PgdAttackSpec {
  WhiteBoxSettings settings;
  AttackOptions options;
};

using AttackSpec = std::variant<SquareAttackSpec, PgdAttackSpec>;

struct DatasetAttack {
  std::vector<PredictionRecord> pre;
  std::vector<PredictionRecord> post;
  std::vector<AttackTrace> traces;  // one per input sample, including failed ones
};

// Attacks every sample with a stream derived from (seed, "attack", index). Failed samples keep
// a diagnostic trace and are left out of the record lists.
DatasetAttack attack_dataset(const ClassifierOracle& oracle, std::span<const Sample> dataset,
                             AttackKind kind, const AttackSpec& spec, const SeededRng& rng,
                             int workers = 1);

void write_trace_line(std::ostream& out, const AttackTrace& trace);
void write_traces(std::ostream& out, std::span<const AttackTrace> traces);
std::vector<AttackTrace> read_traces(std::istream& in);

}  // namespace calattack
