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

#include "calattack/victims.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace calattack {

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  for (int s : sizes_) {
    if (s < 1) throw std::invalid_argument("Mlp layer sizes must be positive");
  }
  if (sizes_.back() < 2) throw std::invalid_argument("Mlp needs at least 2 classes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Layer layer;
    layer.in = sizes_[l];
    layer.out = sizes_[l + 1];
    layer.weights.assign(static_cast<std::size_t>(layer.in * layer.out), 0.0);
    layer.bias.assign(static_cast<std::size_t>(layer.out), 0.0);
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::initialized(std::vector<int> layer_sizes, SeededRng& rng) {
  Mlp model(std::move(layer_sizes));
  for (auto& layer : model.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (double& w : layer.weights) w = rng.uniform(-bound, bound);
  }
  return model;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

Mlp::Activations Mlp::forward(std::span<const double> x) const {
  require_same_dim(x.size(), static_cast<std::size_t>(input_dim()), "Mlp input");
  Activations acts;
  acts.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const Vector& in = acts.post.back();
    Vector z(layer.bias);
    for (int o = 0; o < layer.out; ++o) {
      const double* row = layer.weights.data() + static_cast<std::ptrdiff_t>(o) * layer.in;
      double s = 0.0;
      for (int i = 0; i < layer.in; ++i) s += row[i] * in[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] += s;
    }
    Vector h = z;
    if (l + 1 < layers_.size()) {
      for (double& v : h) v = std::max(0.0, v);
    }
    acts.pre.push_back(std::move(z));
    acts.post.push_back(std::move(h));
  }
  return acts;
}

Vector Mlp::logits(std::span<const double> x) const { return forward(x).post.back(); }

ProbVector Mlp::predict_proba(std::span<const double> x) const {
  return ProbVector::softmax(logits(x));
}

Vector Mlp::backward(const Activations& acts, Vector delta, double weight, Mlp* grad) const {
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    if (l + 1 < layers_.size()) {
      const Vector& z = acts.pre[l];
      for (std::size_t o = 0; o < delta.size(); ++o) {
        if (z[o] <= 0.0) delta[o] = 0.0;
      }
    }
    const Vector& in = acts.post[l];
    if (grad != nullptr) {
      Layer& g = grad->layers_[l];
      for (int o = 0; o < layer.out; ++o) {
        const double d = weight * delta[static_cast<std::size_t>(o)];
        if (d == 0.0) continue;
        double* row = g.weights.data() + static_cast<std::ptrdiff_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) row[i] += d * in[static_cast<std::size_t>(i)];
        g.bias[static_cast<std::size_t>(o)] += d;
      }
    }
    Vector below(static_cast<std::size_t>(layer.in), 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      const double* row = layer.weights.data() + static_cast<std::ptrdiff_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) below[static_cast<std::size_t>(i)] += row[i] * d;
    }
    delta = std::move(below);
  }
  return delta;
}

Vector Mlp::input_gradient(std::span<const double> x, const Objective& objective) const {
  const Activations acts = forward(x);
  const ProbVector probs = ProbVector::softmax(acts.post.back());
  return backward(acts, objective_logit_gradient(probs, objective), 1.0, nullptr);
}

double Mlp::accumulate_gradient(std::span<const double> x, int label, double weight,
                                Mlp& grad) const {
  const Activations acts = forward(x);
  const ProbVector probs = ProbVector::softmax(acts.post.back());
  const Objective ce{ObjectiveKind::kCrossEntropy, label};
  backward(acts, objective_logit_gradient(probs, ce), weight, &grad);
  return objective_value(probs, ce);
}

// ---------------------------------------------------------------------------
// Objectives

double objective_value(const ProbVector& probs, const Objective& objective) {
  const int k = objective.class_index;
  if (k < 0 || k >= probs.size()) throw std::invalid_argument("objective class out of range");
  const double pk = probs[static_cast<std::size_t>(k)];
  switch (objective.kind) {
    case ObjectiveKind::kUnderconfidence: return pk - probs.max_excluding(k);
    case ObjectiveKind::kOverconfidence: return 1.0 - pk;
    case ObjectiveKind::kCrossEntropy: return -std::log(std::max(pk, 1e-300));
  }
  throw std::invalid_argument("unknown objective");
}

Vector objective_logit_gradient(const ProbVector& probs, const Objective& objective) {
  const int k = objective.class_index;
  const int n = probs.size();
  if (k < 0 || k >= n) throw std::invalid_argument("objective class out of range");
  const auto K = static_cast<std::size_t>(k);
  Vector g(static_cast<std::size_t>(n), 0.0);
  // d p_a / d z_i = p_a (1[a=i] - p_i)
  auto add_dprob = [&](std::size_t a, double scale) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += scale * probs[a] * ((i == a ? 1.0 : 0.0) - probs[i]);
    }
  };
  switch (objective.kind) {
    case ObjectiveKind::kOverconfidence:
      add_dprob(K, -1.0);
      break;
    case ObjectiveKind::kUnderconfidence:
      add_dprob(K, 1.0);
      add_dprob(static_cast<std::size_t>(probs.argmax_excluding(k)), -1.0);
      break;
    case ObjectiveKind::kCrossEntropy:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = probs[i] - (i == K ? 1.0 : 0.0);
      break;
    default:
      throw std::invalid_argument("unknown objective");
  }
  return g;
}

// ---------------------------------------------------------------------------
// LookupVictim

LookupVictim::LookupVictim(int input_dim, int cells_per_dim, ProbVector fallback)
    : input_dim_(input_dim), cells_per_dim_(cells_per_dim), fallback_(std::move(fallback)) {
  if (input_dim < 1) throw std::invalid_argument("LookupVictim input_dim must be positive");
  if (cells_per_dim < 1) throw std::invalid_argument("LookupVictim needs at least one cell");
}

std::vector<int> LookupVictim::cell_of(std::span<const double> x) const {
  require_same_dim(x.size(), static_cast<std::size_t>(input_dim_), "LookupVictim input");
  std::vector<int> cell(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int c = static_cast<int>(std::floor(x[i] * cells_per_dim_));
    cell[i] = std::clamp(c, 0, cells_per_dim_ - 1);
  }
  return cell;
}

void LookupVictim::set_cell(std::vector<int> cell, ProbVector output) {
  require_same_dim(cell.size(), static_cast<std::size_t>(input_dim_), "LookupVictim cell");
  require_same_dim(static_cast<std::size_t>(output.size()),
                   static_cast<std::size_t>(fallback_.size()), "LookupVictim classes");
  for (int c : cell) {
    if (c < 0 || c >= cells_per_dim_) throw std::invalid_argument("LookupVictim cell out of range");
  }
  table_.insert_or_assign(std::move(cell), std::move(output));
}

ProbVector LookupVictim::predict_proba(std::span<const double> x) const {
  const auto it = table_.find(cell_of(x));
  return it == table_.end() ? fallback_ : it->second;
}

// ---------------------------------------------------------------------------
// Victim variant

int input_dim(const Victim& victim) {
  return std::visit([](const auto& v) { return v.input_dim(); }, victim);
}

int num_classes(const Victim& victim) {
  return std::visit([](const auto& v) { return v.num_classes(); }, victim);
}

ProbVector predict_proba(const Victim& victim, std::span<const double> features) {
  return std::visit([&](const auto& v) { return v.predict_proba(features); }, victim);
}

Vector input_gradient(const Victim& victim, std::span<const double> features,
                      const Objective& objective) {
  if (const auto* mlp = std::get_if<Mlp>(&victim)) return mlp->input_gradient(features, objective);
  throw std::invalid_argument("input_gradient: lookup victims are not differentiable");
}

double accuracy(const Victim& victim, std::span<const Sample> dataset) {
  if (dataset.empty()) throw std::invalid_argument("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (const auto& s : dataset) hits += predict_proba(victim, s.features).argmax() == s.label;
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer sizes must be positive");
  }
}

Mlp train_mlp(std::span<const Sample> dataset, const TrainConfig& cfg, TrainHistory* history) {
  return train_mlp(dataset, cfg, BatchTransform{}, history);
}

Mlp train_mlp(std::span<const Sample> dataset, const TrainConfig& cfg,
              const BatchTransform& transform, TrainHistory* history) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_mlp: empty dataset");
  const auto dim = dataset.front().features.size();
  int max_label = 0;
  for (const auto& s : dataset) {
    require_same_dim(s.features.size(), dim, "train_mlp sample");
    if (s.label < 0) throw std::invalid_argument("train_mlp: negative label");
    max_label = std::max(max_label, s.label);
  }
  const int classes = cfg.num_classes > 0 ? cfg.num_classes : std::max(2, max_label + 1);
  if (max_label >= classes) throw std::invalid_argument("train_mlp: label >= num_classes");

  std::vector<int> sizes{static_cast<int>(dim)};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(classes);

  const SeededRng root(cfg.seed);
  SeededRng init_rng = derive_stream(root, "init", 0);
  Mlp model = Mlp::initialized(sizes, init_rng);
  Mlp velocity(sizes);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Sample> clean;
  clean.reserve(batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SeededRng shuffle_rng = derive_stream(root, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      clean.clear();
      for (std::size_t i = start; i < end; ++i) clean.push_back(dataset[order[i]]);

      std::vector<Sample> transformed;
      std::span<const Sample> examples = clean;
      if (transform) {
        SeededRng batch_rng = derive_stream(
            derive_stream(root, "transform", static_cast<std::uint64_t>(epoch)), "batch", batches);
        transformed = transform(model, clean, batch_rng);
        examples = transformed;
      }

      Mlp grad(sizes);
      const double weight = 1.0 / static_cast<double>(clean.size());
      double loss = 0.0;
      try {
        for (const auto& s : examples) loss += model.accumulate_gradient(s.features, s.label, weight, grad);
      } catch (const std::invalid_argument&) {
        loss = std::numeric_limits<double>::infinity();  // logits overflowed
      }
      loss *= weight;
      if (!std::isfinite(loss)) throw std::runtime_error("train_mlp: non-finite loss");
      epoch_loss += loss;
      ++batches;

      for (std::size_t l = 0; l < model.layers().size(); ++l) {
        auto& layer = model.layers()[l];
        auto& vel = velocity.layers()[l];
        const auto& g = grad.layers()[l];
        for (std::size_t i = 0; i < layer.weights.size(); ++i) {
          vel.weights[i] = cfg.momentum * vel.weights[i] - cfg.learning_rate * g.weights[i];
          layer.weights[i] += vel.weights[i];
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
          vel.bias[i] = cfg.momentum * vel.bias[i] - cfg.learning_rate * g.bias[i];
          layer.bias[i] += vel.bias[i];
        }
        const auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(layer.weights.begin(), layer.weights.end(), finite) ||
            !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) {
          throw std::runtime_error("train_mlp: non-finite loss (parameters diverged)");
        }
      }
    }
    if (history != nullptr) history->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kMlpMagic = "calattack-mlp";
constexpr int kMlpVersion = 1;

void write_values(std::ostream& out, const Vector& values) {
  out << std::hexfloat;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << values[i];
  out << std::defaultfloat << '\n';
}

Vector read_values(std::istream& in, std::size_t n) {
  Vector values(n);
  for (auto& v : values) {
    std::string token;
    if (!(in >> token)) throw std::runtime_error("load_mlp: truncated parameter block");
    char* end = nullptr;
    v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
      throw std::runtime_error("load_mlp: bad number '" + token + "'");
    }
  }
  return values;
}

}  // namespace

void save_mlp(const Mlp& model, std::ostream& out) {
  out << kMlpMagic << ' ' << kMlpVersion << '\n';
  out << "layers " << model.layer_sizes().size();
  for (int s : model.layer_sizes()) out << ' ' << s;
  out << '\n';
  for (const auto& layer : model.layers()) {
    write_values(out, layer.weights);
    write_values(out, layer.bias);
  }
}

Mlp load_mlp(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMlpMagic) {
    throw std::runtime_error("load_mlp: not a calattack model file");
  }
  if (version != kMlpVersion) {
    throw std::runtime_error("load_mlp: unsupported version " + std::to_string(version));
  }
  std::string tag;
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "layers" || count < 2 || count > 64) {
    throw std::runtime_error("load_mlp: bad layer header");
  }
  std::vector<int> sizes(count);
  for (int& s : sizes) {
    if (!(in >> s)) throw std::runtime_error("load_mlp: bad layer size");
  }
  Mlp model(sizes);
  for (auto& layer : model.layers()) {
    layer.weights = read_values(in, layer.weights.size());
    layer.bias = read_values(in, layer.bias.size());
  }
  return model;
}

void save_mlp(const Mlp& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  save_mlp(model, out);
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read model file " + path);
  return load_mlp(in);
}

}  // namespace calattack
