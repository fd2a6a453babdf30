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

#include "calattack/defences.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "calattack/metrics.hpp"
#include "json.hpp"

namespace calattack {

ProbVector temper(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  Vector scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  return ProbVector::softmax(scaled);
}

// ---------------------------------------------------------------------------
// Temperature scaling

double mean_nll(std::span<const Vector> logits, std::span<const int> labels, double temperature) {
  if (logits.empty()) throw std::invalid_argument("mean_nll: empty validation set");
  if (logits.size() != labels.size()) throw std::invalid_argument("mean_nll: misaligned labels");
  double total = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const Vector& z = logits[n];
    const auto y = static_cast<std::size_t>(labels[n]);
    if (labels[n] < 0 || y >= z.size()) throw std::invalid_argument("mean_nll: label out of range");
    const double top = *std::max_element(z.begin(), z.end()) / temperature;
    double sum = 0.0;
    for (double v : z) sum += std::exp(v / temperature - top);
    total += top + std::log(sum) - z[y] / temperature;
  }
  return total / static_cast<double>(logits.size());
}

TemperatureModel fit_temperature(std::span<const Vector> logits, std::span<const int> labels,
                                 double t_min, double t_max, double tol) {
  if (logits.empty()) throw std::invalid_argument("fit_temperature: empty validation set");
  if (!(t_min > 0.0 && t_max > t_min)) throw std::invalid_argument("fit_temperature: bad range");
  auto nll = [&](double t) { return mean_nll(logits, labels, t); };

  // NLL is convex in 1/T, hence unimodal in log T: coarse grid, then golden section.
  constexpr int kGrid = 64;
  const double log_lo = std::log(t_min);
  const double log_hi = std::log(t_max);
  auto grid_t = [&](int i) { return std::exp(log_lo + (log_hi - log_lo) * i / (kGrid - 1)); };
  int best = 0;
  double best_nll = nll(grid_t(0));
  for (int i = 1; i < kGrid; ++i) {
    const double v = nll(grid_t(i));
    if (v < best_nll) {
      best_nll = v;
      best = i;
    }
  }
  double a = grid_t(std::max(best - 1, 0));
  double b = grid_t(std::min(best + 1, kGrid - 1));
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = nll(c);
  double fd = nll(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = nll(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = nll(d);
    }
  }
  double t = 0.5 * (a + b);
  if (nll(t) > nll(1.0)) t = 1.0;
  return {t};
}

// ---------------------------------------------------------------------------
// Compression scaling

void CSConfig::validate() const {
  if (num_bins < 1) throw std::invalid_argument("CS num_bins must be positive");
  if (target_bins < 1 || target_bins > num_bins) {
    throw std::invalid_argument("CS target_bins must lie in [1, num_bins]");
  }
  if (!(t_min > 0.0 && t_max > t_min)) throw std::invalid_argument("CS temperature range invalid");
  if (grid_points < 2) throw std::invalid_argument("CS grid needs at least two points");
  if (!(tolerance > 0.0)) throw std::invalid_argument("CS tolerance must be positive");
}

CompressionSlot compression_slot(double confidence, const CSConfig& cfg) {
  cfg.validate();
  const int B = cfg.num_bins;
  const int t = cfg.target_bins;
  // Contiguous, order-preserving blocks of source bins per target bin.
  auto block_of = [&](int bin) { return (bin - 1) * t / B; };

  CompressionSlot slot;
  slot.source_bin = bin_index(confidence, B);
  const int block = block_of(slot.source_bin);
  int first = slot.source_bin;
  while (first > 1 && block_of(first - 1) == block) --first;
  int last = slot.source_bin;
  while (last < B && block_of(last + 1) == block) ++last;

  slot.target_bin = B - t + 1 + block;
  slot.source_lower = static_cast<double>(slot.source_bin - 1) / B;
  slot.source_upper = static_cast<double>(slot.source_bin) / B;
  // Each source bin of the block owns an equal slice of its target bin.
  const double target_lower = static_cast<double>(slot.target_bin - 1) / B;
  const double width = (1.0 / B) / (last - first + 1);
  slot.slot_lower = target_lower + width * (slot.source_bin - first);
  slot.slot_upper = slot.slot_lower + width;
  return slot;
}

double compressed_confidence(double confidence, const CSConfig& cfg) {
  const CompressionSlot s = compression_slot(confidence, cfg);
  const double range = s.source_upper - s.source_lower;
  return s.slot_lower + (confidence - s.source_lower) / range * (s.slot_upper - s.slot_lower);
}

CompressionResult compression_scale(std::span<const double> logits, const CSConfig& cfg) {
  cfg.validate();
  const ProbVector raw = ProbVector::softmax(logits);
  CompressionResult out;
  out.target = compressed_confidence(raw.confidence(), cfg);

  // Tempered top-class confidence falls monotonically as T grows.
  auto conf_at = [&](double t) { return temper(logits, t).confidence(); };
  const double log_lo = std::log(cfg.t_min);
  const double log_hi = std::log(cfg.t_max);
  auto grid_t = [&](int i) {
    return std::exp(log_lo + (log_hi - log_lo) * i / (cfg.grid_points - 1));
  };

  double best_t = grid_t(0);
  double best_gap = std::abs(conf_at(best_t) - out.target);
  double lo_t = 0.0;
  double hi_t = 0.0;
  double prev_t = best_t;
  double prev_c = conf_at(prev_t);
  for (int i = 1; i < cfg.grid_points; ++i) {
    const double t = grid_t(i);
    const double c = conf_at(t);
    if (std::abs(c - out.target) < best_gap) {
      best_gap = std::abs(c - out.target);
      best_t = t;
    }
    if (lo_t == 0.0 && prev_c >= out.target && c <= out.target) {
      lo_t = prev_t;
      hi_t = t;
    }
    prev_t = t;
    prev_c = c;
  }
  if (lo_t > 0.0) {
    for (int iter = 0; iter < 100 && best_gap > cfg.tolerance * 1e-3; ++iter) {
      const double mid = std::sqrt(lo_t * hi_t);
      const double c = conf_at(mid);
      if (std::abs(c - out.target) < best_gap) {
        best_gap = std::abs(c - out.target);
        best_t = mid;
      }
      if (c > out.target) {
        lo_t = mid;
      } else {
        hi_t = mid;
      }
    }
  }
  out.temperature = best_t;
  out.probs = temper(logits, best_t);
  out.converged = best_gap <= cfg.tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial training

Mlp caat_train(std::span<const Sample> dataset, const TrainConfig& cfg, const WhiteBoxSettings& wb,
               TrainHistory* history) {
  wb.validate();
  auto transform = [&wb](const Mlp& current, std::span<const Sample> batch, SeededRng& rng) {
    const VictimOracle oracle{Victim(current)};
    std::vector<Sample> out;
    out.reserve(2 * batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (AttackKind kind : {AttackKind::kUCA, AttackKind::kOCA}) {
        SeededRng stream = derive_stream(rng, to_string(kind), i);
        const AttackTrace trace = pgd_calibration_attack(oracle, batch[i], kind, wb, stream);
        out.push_back({trace.adversarial_features, batch[i].label});
      }
    }
    return out;
  };
  return train_mlp(dataset, cfg, transform, history);
}

void PgdTrainSettings::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("PGD epsilon must be positive");
  if (!(step_size > 0.0)) throw std::invalid_argument("PGD step size must be positive");
  if (iterations < 0) throw std::invalid_argument("PGD iterations must be non-negative");
}

Vector pgd_cross_entropy(const Mlp& model, const Sample& sample, const PgdTrainSettings& pgd,
                         SeededRng& rng) {
  const AttackBudget ball{Norm::kLinf, pgd.epsilon, 1.0, 1, 0.0};
  Vector x = sample.features;
  if (pgd.iterations == 0) return x;
  if (pgd.random_start) {
    for (double& v : x) v += rng.uniform(-pgd.epsilon, pgd.epsilon);
    x = clip_to_ball(sample, x, ball);
  }
  const Objective ce{ObjectiveKind::kCrossEntropy, sample.label};
  for (int it = 0; it < pgd.iterations; ++it) {
    const Vector g = model.input_gradient(x, ce);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (g[i] != 0.0) x[i] += pgd.step_size * (g[i] > 0.0 ? 1.0 : -1.0);
    }
    x = clip_to_ball(sample, x, ball);
  }
  return x;
}

Mlp adversarial_train(std::span<const Sample> dataset, const TrainConfig& cfg,
                      const PgdTrainSettings& pgd, TrainHistory* history) {
  pgd.validate();
  auto transform = [&pgd](const Mlp& current, std::span<const Sample> batch, SeededRng& rng) {
    std::vector<Sample> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      SeededRng stream = derive_stream(rng, "pgd", i);
      out.push_back({pgd_cross_entropy(current, batch[i], pgd, stream), batch[i].label});
    }
    return out;
  };
  return train_mlp(dataset, cfg, transform, history);
}

// ---------------------------------------------------------------------------
// Sidecar

std::string defence_to_json(const DefenceParams& params) {
  nlohmann::json j;
  j["format"] = "calattack-defence";
  j["version"] = 1;
  j["kind"] = params.kind;
  j["temperature"] = params.ts.temperature;
  j["cs"] = {{"num_bins", params.cs.num_bins},       {"target_bins", params.cs.target_bins},
             {"t_min", params.cs.t_min},             {"t_max", params.cs.t_max},
             {"grid_points", params.cs.grid_points}, {"tolerance", params.cs.tolerance}};
  return j.dump(2) + "\n";
}

DefenceParams defence_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "calattack-defence") {
    throw std::runtime_error("not a calattack defence sidecar");
  }
  if (j.value("version", 0) != 1) throw std::runtime_error("unsupported defence sidecar version");
  DefenceParams p;
  p.kind = j.at("kind").get<std::string>();
  if (p.kind != "none" && p.kind != "ts" && p.kind != "cs") {
    throw std::runtime_error("unknown defence kind in sidecar: " + p.kind);
  }
  p.ts.temperature = j.at("temperature").get<double>();
  const auto& cs = j.at("cs");
  p.cs.num_bins = cs.at("num_bins").get<int>();
  p.cs.target_bins = cs.at("target_bins").get<int>();
  p.cs.t_min = cs.at("t_min").get<double>();
  p.cs.t_max = cs.at("t_max").get<double>();
  p.cs.grid_points = cs.at("grid_points").get<int>();
  p.cs.tolerance = cs.at("tolerance").get<double>();
  p.cs.validate();
  if (!(p.ts.temperature > 0.0)) throw std::runtime_error("sidecar temperature must be positive");
  return p;
}

void save_defence(const DefenceParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write defence sidecar " + path);
  out << defence_to_json(params);
}

DefenceParams load_defence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read defence sidecar " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return defence_from_json(buf.str());
}

}  // namespace calattack
