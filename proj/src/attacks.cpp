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

#include "calattack/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace calattack {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kUCA: return "UCA";
    case AttackKind::kOCA: return "OCA";
    case AttackKind::kMMA: return "MMA";
    case AttackKind::kRCA: return "RCA";
  }
  return "?";
}

std::string_view to_string(Direction direction) {
  return direction == Direction::kUnder ? "UCA" : "OCA";
}

AttackKind parse_attack_kind(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "UCA") return AttackKind::kUCA;
  if (upper == "OCA") return AttackKind::kOCA;
  if (upper == "MMA") return AttackKind::kMMA;
  if (upper == "RCA") return AttackKind::kRCA;
  throw std::invalid_argument("unknown attack kind: " + std::string(text));
}

Direction parse_direction(std::string_view text) {
  const AttackKind kind = parse_attack_kind(text);
  if (kind == AttackKind::kUCA) return Direction::kUnder;
  if (kind == AttackKind::kOCA) return Direction::kOver;
  throw std::invalid_argument("not a direction: " + std::string(text));
}

void WhiteBoxSettings::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("white-box epsilon must be positive");
  if (!(step_size > 0.0 && step_size <= epsilon)) {
    throw std::invalid_argument("white-box step size must lie in (0, epsilon]");
  }
  if (iterations < 0) throw std::invalid_argument("white-box iterations must be non-negative");
  if (!(keep_under > 0.0 && keep_under <= 1.0) || !(keep_over > 0.0 && keep_over <= 1.0)) {
    throw std::invalid_argument("keep fractions must lie in (0,1]");
  }
  if (!(stop_loss >= 0.0)) throw std::invalid_argument("stop_loss must be non-negative");
}

double miscalibration_loss(const ProbVector& probs, int k, Direction direction) {
  if (k < 0 || k >= probs.size()) throw std::invalid_argument("miscalibration_loss: bad class");
  const double pk = probs[static_cast<std::size_t>(k)];
  return direction == Direction::kUnder ? pk - probs.max_excluding(k) : 1.0 - pk;
}

ResolvedDirection resolve_direction(AttackKind kind, int true_label, int predicted_label,
                                    double confidence, int num_classes, SeededRng& rng) {
  switch (kind) {
    case AttackKind::kUCA: return {Direction::kUnder, std::nullopt};
    case AttackKind::kOCA: return {Direction::kOver, std::nullopt};
    case AttackKind::kMMA:
      return {true_label != predicted_label ? Direction::kOver : Direction::kUnder, std::nullopt};
    case AttackKind::kRCA: {
      if (num_classes < 2) throw std::invalid_argument("resolve_direction: K must be at least 2");
      const double g = rng.uniform(1.0 / num_classes, 1.0);
      // g == confidence is already on target; the stop check fires before any proposal.
      return {g > confidence ? Direction::kOver : Direction::kUnder, g};
    }
  }
  throw std::invalid_argument("resolve_direction: unknown kind");
}

// ---------------------------------------------------------------------------
// Square search proposals

double SquareSchedule::fraction(double p_init, int iteration) const {
  long it = iteration;
  if (horizon > 0) it = static_cast<long>(static_cast<double>(iteration) * 10000.0 / horizon);
  double p = p_init;
  for (int milestone : milestones) {
    if (it > milestone) p /= 2.0;
  }
  return p;
}

int square_side(double fraction, const GridShape& grid) {
  const double area = fraction * grid.height * grid.width;
  const int side = static_cast<int>(std::lround(std::sqrt(area)));
  return std::clamp(side, 1, std::min(grid.height, grid.width));
}

namespace {

GridShape resolve_grid(const AttackOptions& options, std::size_t dim) {
  const GridShape grid = options.grid.value_or(GridShape::flat(static_cast<int>(dim)));
  if (grid.height < 1 || grid.width < 1 || grid.channels < 1 ||
      static_cast<std::size_t>(grid.size()) != dim) {
    throw std::invalid_argument("grid shape does not match the feature dimension");
  }
  return grid;
}

std::size_t grid_index(const GridShape& grid, int row, int col, int ch) {
  return static_cast<std::size_t>((row * grid.width + col) * grid.channels + ch);
}

Vector linf_proposal(std::span<const double> current, std::span<const double> original,
                     const GridShape& grid, int side, double eps, SeededRng& rng,
                     int attempts) {
  const int r0 = rng.uniform_int(0, grid.height - side);
  const int c0 = rng.uniform_int(0, grid.width - side);
  Vector candidate(current.begin(), current.end());
  for (int attempt = 0; attempt < std::max(1, attempts); ++attempt) {
    bool changed = false;
    for (int ch = 0; ch < grid.channels; ++ch) {
      const double delta = rng.coin() ? eps : -eps;
      for (int r = r0; r < r0 + side; ++r) {
        for (int c = c0; c < c0 + side; ++c) {
          const auto i = grid_index(grid, r, c, ch);
          candidate[i] = std::clamp(original[i] + delta, 0.0, 1.0);
          changed |= std::abs(candidate[i] - current[i]) >= 1e-7;
        }
      }
    }
    if (changed) break;
  }
  return candidate;
}

// Centre-weighted bump of concentric rectangles, unit L2 norm.
std::vector<double> rectangle_bump(int rows, int cols) {
  std::vector<double> bump(static_cast<std::size_t>(rows * cols), 0.0);
  if (rows == 0 || cols == 0) return bump;
  int top = rows / 2;
  int left = cols / 2;
  const int rings = std::max(rows / 2 + 1, cols / 2 + 1);
  for (int ring = 0; ring < rings; ++ring) {
    const double v = 1.0 / ((ring + 1.0) * (ring + 1.0));
    for (int r = std::max(top, 0); r < std::min(top + 2 * ring + 1, rows); ++r) {
      for (int c = std::max(left, 0); c < std::min(left + 2 * ring + 1, cols); ++c) {
        bump[static_cast<std::size_t>(r * cols + c)] += v;
      }
    }
    --top;
    --left;
  }
  double norm = 0.0;
  for (double v : bump) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : bump) v /= norm;
  return bump;
}

// Two opposite-signed bumps stacked vertically, optionally transposed.
std::vector<double> split_bump(int side, SeededRng& rng) {
  std::vector<double> out(static_cast<std::size_t>(side * side), 0.0);
  const int half = side / 2;
  const auto upper = rectangle_bump(half, side);
  const auto lower = rectangle_bump(side - half, side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      out[static_cast<std::size_t>(r * side + c)] =
          r < half ? upper[static_cast<std::size_t>(r * side + c)]
                   : -lower[static_cast<std::size_t>((r - half) * side + c)];
    }
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : out) v /= norm;
  if (rng.coin()) {
    std::vector<double> t(out.size());
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) t[static_cast<std::size_t>(c * side + r)] = out[static_cast<std::size_t>(r * side + c)];
    }
    out = std::move(t);
  }
  return out;
}

Vector l2_proposal(std::span<const double> current, std::span<const double> original,
                   const GridShape& grid, int side, double eps, SeededRng& rng) {
  const std::size_t dim = current.size();
  Vector delta(dim);
  for (std::size_t i = 0; i < dim; ++i) delta[i] = current[i] - original[i];

  const int r1 = rng.uniform_int(0, grid.height - side);
  const int c1 = rng.uniform_int(0, grid.width - side);
  const int r2 = rng.uniform_int(0, grid.height - side);
  const int c2 = rng.uniform_int(0, grid.width - side);
  auto in_window = [side](int r, int c, int r0, int c0) {
    return r >= r0 && r < r0 + side && c >= c0 && c < c0 + side;
  };

  double image_norm_sq = 0.0;
  for (double v : delta) image_norm_sq += v * v;

  const auto bump = split_bump(side, rng);
  const int C = grid.channels;
  for (int ch = 0; ch < C; ++ch) {
    double window_sq = 0.0;  // mass currently in the first window
    double union_sq = 0.0;   // mass in either window, released for redistribution
    for (int r = 0; r < grid.height; ++r) {
      for (int c = 0; c < grid.width; ++c) {
        const double v = delta[grid_index(grid, r, c, ch)];
        const bool w1 = in_window(r, c, r1, c1);
        if (w1) window_sq += v * v;
        if (w1 || in_window(r, c, r2, c2)) union_sq += v * v;
      }
    }
    const double window_norm = std::sqrt(window_sq);
    const double sign = rng.coin() ? 1.0 : -1.0;
    std::vector<double> fresh(bump.size());
    double fresh_sq = 0.0;
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const auto b = static_cast<std::size_t>(r * side + c);
        const double old = delta[grid_index(grid, r1 + r, c1 + c, ch)] / (1e-10 + window_norm);
        fresh[b] = sign * bump[b] + old;
        fresh_sq += fresh[b] * fresh[b];
      }
    }
    const double target =
        std::sqrt(std::max(eps * eps - image_norm_sq, 0.0) / C + union_sq);
    const double scale = fresh_sq > 0.0 ? target / std::sqrt(fresh_sq) : 0.0;
    for (int r = r2; r < r2 + side; ++r) {
      for (int c = c2; c < c2 + side; ++c) delta[grid_index(grid, r, c, ch)] = 0.0;
    }
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        delta[grid_index(grid, r1 + r, c1 + c, ch)] =
            fresh[static_cast<std::size_t>(r * side + c)] * scale;
      }
    }
  }

  double norm = 0.0;
  for (double v : delta) norm += v * v;
  norm = std::sqrt(norm);
  Vector candidate(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double step = norm > 0.0 ? delta[i] / norm * eps : 0.0;
    candidate[i] = std::clamp(original[i] + step, 0.0, 1.0);
  }
  return candidate;
}

}  // namespace

Vector square_perturb(std::span<const double> current, const Sample& original,
                      const AttackBudget& budget, int iteration, SeededRng& rng,
                      const AttackOptions& options) {
  if (iteration < 1) throw std::invalid_argument("square_perturb: iteration must be >= 1");
  require_same_dim(current.size(), original.features.size(), "square_perturb");
  const GridShape grid = resolve_grid(options, current.size());
  const double p = options.schedule.fraction(budget.patch_fraction, iteration);
  const int side = square_side(p, grid);
  Vector candidate = budget.norm == Norm::kLinf
                         ? linf_proposal(current, original.features, grid, side, budget.epsilon,
                                         rng, options.resample_attempts)
                         : l2_proposal(current, original.features, grid, side, budget.epsilon, rng);
  return clip_to_ball(original, candidate, budget);
}

// ---------------------------------------------------------------------------
// Attack loops

namespace {

struct LoopState {
  AttackTrace trace;
  int k = 0;
  double loss = 0.0;
  ProbVector probs;
};

LoopState begin_attack(const ClassifierOracle& oracle, const Sample& sample, AttackKind kind,
                       Norm norm, SeededRng& rng) {
  LoopState s;
  s.trace.kind = kind;
  s.trace.norm = norm;
  s.trace.true_label = sample.label;
  s.trace.adversarial_features = sample.features;
  s.probs = oracle.predict(sample.features);
  s.trace.queries_used = 1;
  s.k = s.probs.argmax();
  s.trace.pre_label = s.k;
  s.trace.pre_confidence = s.probs.confidence();
  const auto resolved = resolve_direction(kind, sample.label, s.k, s.trace.pre_confidence,
                                          s.probs.size(), rng);
  s.trace.direction = resolved.direction;
  s.trace.rca_target = resolved.rca_target;
  s.loss = miscalibration_loss(s.probs, s.k, s.trace.direction);
  s.trace.accepted_losses.push_back(s.loss);
  return s;
}

bool should_stop(const LoopState& s, double stop_loss, const AttackOptions& options) {
  if (s.loss < stop_loss) return true;
  const double conf = s.probs[static_cast<std::size_t>(s.k)];
  if (s.trace.rca_target && std::abs(conf - *s.trace.rca_target) <= options.rca_tolerance) {
    return true;
  }
  if (options.confidence_goal) {
    const double goal = *options.confidence_goal;
    if (s.trace.direction == Direction::kUnder ? conf <= goal : conf >= goal) return true;
  }
  return false;
}

// Greedy acceptance: strictly lower loss and unchanged predicted label. With
// `underconfidence_guard`, an under-direction step must also strictly lower p_k (the UCA loss
// can fall while p_k rises when the runner-up drops faster).
void consider(LoopState& s, Vector candidate, const ProbVector& probs, const AttackOptions& options) {
  if (probs.argmax() != s.k) return;
  const double loss = miscalibration_loss(probs, s.k, s.trace.direction);
  if (!(loss < s.loss)) return;
  const auto k = static_cast<std::size_t>(s.k);
  if (options.underconfidence_guard && s.trace.direction == Direction::kUnder &&
      !(probs[k] < s.probs[k])) {
    return;
  }
  s.trace.adversarial_features = std::move(candidate);
  s.probs = probs;
  s.loss = loss;
  ++s.trace.accepted_updates;
  s.trace.accepted_losses.push_back(loss);
}

AttackTrace finish(LoopState& s, const Sample& sample) {
  s.trace.post_label = s.probs.argmax();
  s.trace.post_confidence = s.probs[static_cast<std::size_t>(s.k)];
  s.trace.perturbation_norm = distance(s.trace.norm, s.trace.adversarial_features, sample.features);
  return std::move(s.trace);
}

}  // namespace

AttackTrace calibration_attack(const ClassifierOracle& oracle, const Sample& sample,
                               AttackKind kind, const AttackBudget& budget, SeededRng& rng,
                               const AttackOptions& options) {
  budget.validate();
  require_same_dim(sample.features.size(), static_cast<std::size_t>(oracle.input_dim()),
                   "calibration_attack");
  LoopState s = begin_attack(oracle, sample, kind, budget.norm, rng);
  for (int it = 1; it <= budget.max_iterations; ++it) {
    if (should_stop(s, budget.stop_loss, options)) break;
    Vector candidate = square_perturb(s.trace.adversarial_features, sample, budget, it, rng, options);
    const ProbVector probs = oracle.predict(candidate);
    ++s.trace.queries_used;
    consider(s, std::move(candidate), probs, options);
  }
  return finish(s, sample);
}

AttackTrace pgd_calibration_attack(const GradientOracle& oracle, const Sample& sample,
                                   AttackKind kind, const WhiteBoxSettings& settings,
                                   SeededRng& rng, const AttackOptions& options) {
  settings.validate();
  require_same_dim(sample.features.size(), static_cast<std::size_t>(oracle.input_dim()),
                   "pgd_calibration_attack");
  const AttackBudget ball{Norm::kLinf, settings.epsilon, 1.0, 1, settings.stop_loss};
  LoopState s = begin_attack(oracle, sample, kind, Norm::kLinf, rng);
  const double keep = s.trace.direction == Direction::kUnder ? settings.keep_under
                                                              : settings.keep_over;
  const ObjectiveKind objective = s.trace.direction == Direction::kUnder
                                      ? ObjectiveKind::kUnderconfidence
                                      : ObjectiveKind::kOverconfidence;
  for (int it = 1; it <= settings.iterations; ++it) {
    if (should_stop(s, settings.stop_loss, options)) break;
    const Vector& current = s.trace.adversarial_features;
    const Vector grad = oracle.input_gradient(current, {objective, s.k});
    ++s.trace.queries_used;
    Vector proposal(current);
    for (std::size_t i = 0; i < proposal.size(); ++i) {
      const bool kept = rng.uniform() < keep;
      if (kept && grad[i] != 0.0) proposal[i] -= settings.step_size * (grad[i] > 0.0 ? 1.0 : -1.0);
    }
    Vector candidate = clip_to_ball(sample, proposal, ball);
    const ProbVector probs = oracle.predict(candidate);
    ++s.trace.queries_used;
    consider(s, std::move(candidate), probs, options);
  }
  return finish(s, sample);
}

DatasetAttack attack_dataset(const ClassifierOracle& oracle, std::span<const Sample> dataset,
                             AttackKind kind, const AttackSpec& spec, const SeededRng& rng,
                             int workers) {
  if (dataset.empty()) throw std::invalid_argument("attack_dataset: empty dataset");
  const auto* gradient_oracle = dynamic_cast<const GradientOracle*>(&oracle);
  if (std::holds_alternative<PgdAttackSpec>(spec) && gradient_oracle == nullptr) {
    throw std::invalid_argument("attack_dataset: white-box attack needs a gradient oracle");
  }

  DatasetAttack out;
  out.traces.resize(dataset.size());
  auto run_one = [&](std::size_t i) {
    SeededRng stream = derive_stream(rng, "attack", i);
    AttackTrace trace;
    try {
      if (const auto* sq = std::get_if<SquareAttackSpec>(&spec)) {
        trace = calibration_attack(oracle, dataset[i], kind, sq->budget, stream, sq->options);
      } else {
        const auto& pgd = std::get<PgdAttackSpec>(spec);
        trace = pgd_calibration_attack(*gradient_oracle, dataset[i], kind, pgd.settings, stream,
                                       pgd.options);
      }
    } catch (const OracleUnavailable& e) {
      trace = AttackTrace{};
      trace.kind = kind;
      trace.true_label = dataset[i].label;
      trace.error = e.what();
    }
    trace.sample_index = i;
    out.traces[i] = std::move(trace);
  };

  const std::size_t n_workers =
      oracle.concurrent() ? std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)),
                                                     1, dataset.size())
                          : 1;
  if (n_workers == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < dataset.size(); i = next++) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = dataset.size();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (const auto& trace : out.traces) {
    if (!trace.ok()) continue;
    out.pre.push_back(trace.pre_record());
    out.post.push_back(trace.post_record());
  }
  return out;
}

}  // namespace calattack
