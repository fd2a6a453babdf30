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

#include "calattack/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace calattack {

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

void validate_sample(const Sample& sample, int num_classes) {
  for (std::size_t i = 0; i < sample.features.size(); ++i) {
    const double v = sample.features[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("feature " + std::to_string(i) + " outside [0,1]: " +
                                  std::to_string(v));
    }
  }
  if (sample.label < 0 || sample.label >= num_classes) {
    throw std::invalid_argument("label " + std::to_string(sample.label) + " outside [0," +
                                std::to_string(num_classes) + ")");
  }
}

// ---------------------------------------------------------------------------
// ProbVector

ProbVector::ProbVector(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw std::invalid_argument("ProbVector needs at least 2 classes");
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p)) throw std::invalid_argument("ProbVector entry is not finite");
    if (p < 0.0 || p > 1.0 + kSumTolerance) {
      throw std::invalid_argument("ProbVector entry outside [0,1]: " + std::to_string(p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw std::invalid_argument("ProbVector sums to " + std::to_string(sum));
  }
  // Rounding-level deviations are already within the 1e-9 contract; leave them untouched.
  if (std::abs(sum - 1.0) > 1e-12) {
    for (double& p : probs_) p = std::min(1.0, p / sum);
  }
}

ProbVector ProbVector::uniform(int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("ProbVector needs at least 2 classes");
  return ProbVector(Vector(static_cast<std::size_t>(num_classes), 1.0 / num_classes));
}

ProbVector ProbVector::softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("softmax needs at least 2 logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(top)) throw std::invalid_argument("softmax of non-finite logits");
  Vector probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - top);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return ProbVector(std::move(probs));
}

int ProbVector::argmax() const {
  return static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

int ProbVector::argmax_excluding(int k) const {
  int best = -1;
  for (int j = 0; j < size(); ++j) {
    if (j == k) continue;
    if (best < 0 || probs_[static_cast<std::size_t>(j)] > probs_[static_cast<std::size_t>(best)]) {
      best = j;
    }
  }
  return best;
}

double ProbVector::max_excluding(int k) const {
  return probs_[static_cast<std::size_t>(argmax_excluding(k))];
}

// ---------------------------------------------------------------------------
// Enums

std::string_view to_string(Norm norm) { return norm == Norm::kLinf ? "linf" : "l2"; }

Norm parse_norm(std::string_view text) {
  if (text == "linf" || text == "Linf" || text == "inf") return Norm::kLinf;
  if (text == "l2" || text == "L2") return Norm::kL2;
  throw std::invalid_argument("unknown norm: " + std::string(text));
}

void AttackBudget::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (!(patch_fraction > 0.0 && patch_fraction <= 1.0)) {
    throw std::invalid_argument("patch_fraction must lie in (0,1]");
  }
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
  if (!(stop_loss >= 0.0)) throw std::invalid_argument("stop_loss must be non-negative");
}

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kUnderconfidence: return "uca";
    case ObjectiveKind::kOverconfidence: return "oca";
    case ObjectiveKind::kCrossEntropy: return "ce";
  }
  return "?";
}

ObjectiveKind parse_objective(std::string_view text) {
  if (text == "uca" || text == "UCA") return ObjectiveKind::kUnderconfidence;
  if (text == "oca" || text == "OCA") return ObjectiveKind::kOverconfidence;
  if (text == "ce" || text == "cross-entropy") return ObjectiveKind::kCrossEntropy;
  throw std::invalid_argument("unknown objective: " + std::string(text));
}

// ---------------------------------------------------------------------------
// Randomness

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

SeededRng::SeededRng(std::uint64_t master_seed)
    : master_seed_(master_seed), engine_(splitmix64(master_seed)) {}

double SeededRng::uniform(double lo, double hi) {
  // 53 random mantissa bits; avoids implementation-defined distributions.
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double SeededRng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int SeededRng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return lo + static_cast<int>(r % span);
}

bool SeededRng::coin() { return (engine_() >> 63) != 0; }

SeededRng derive_stream(const SeededRng& rng, std::string_view tag, std::uint64_t index) {
  std::uint64_t key = splitmix64(rng.master_seed() ^ fnv1a(tag));
  key = splitmix64(key ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  return SeededRng(key);
}

// ---------------------------------------------------------------------------
// Geometry

double linf_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "linf_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double distance(Norm norm, std::span<const double> a, std::span<const double> b) {
  return norm == Norm::kLinf ? linf_distance(a, b) : l2_distance(a, b);
}

Vector clip_to_ball(std::span<const double> original, std::span<const double> candidate,
                    const AttackBudget& budget) {
  require_same_dim(original.size(), candidate.size(), "clip_to_ball");
  Vector out(candidate.begin(), candidate.end());
  const double eps = budget.epsilon;
  if (budget.norm == Norm::kLinf) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::clamp(out[i], original[i] - eps, original[i] + eps);
    }
  } else {
    const double norm = l2_distance(original, candidate);
    if (norm > eps) {
      // Shrink until rounding lands on or inside the sphere, so clipping is idempotent.
      for (double scale = eps / norm;; scale = std::nextafter(scale, 0.0)) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          out[i] = original[i] + (candidate[i] - original[i]) * scale;
        }
        if (l2_distance(original, out) <= eps) break;
      }
    }
  }
  // Original lies in [0,1]^d, so box clipping never leaves the ball.
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Vector clip_to_ball(const Sample& original, std::span<const double> candidate,
                    const AttackBudget& budget) {
  return clip_to_ball(std::span<const double>(original.features), candidate, budget);
}

}  // namespace calattack
