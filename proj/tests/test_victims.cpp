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

#include <cmath>
#include <sstream>

#include "calattack/harness.hpp"
#include "calattack/victims.hpp"
#include "doctest.h"

using namespace calattack;

namespace {

// Plain logistic regression by full-batch gradient descent; the reference for separability.
double logistic_train_accuracy(const std::vector<Sample>& data) {
  const std::size_t d = data.front().features.size();
  Vector w(d, 0.0);
  double b = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Vector gw(d, 0.0);
    double gb = 0.0;
    for (const auto& s : data) {
      double z = b;
      for (std::size_t i = 0; i < d; ++i) z += w[i] * (s.features[i] - 0.5);
      const double err = 1.0 / (1.0 + std::exp(-z)) - s.label;
      for (std::size_t i = 0; i < d; ++i) gw[i] += err * (s.features[i] - 0.5);
      gb += err;
    }
    for (std::size_t i = 0; i < d; ++i) w[i] -= 50.0 * gw[i] / data.size();
    b -= 50.0 * gb / data.size();
  }
  int ok = 0;
  for (const auto& s : data) {
    double z = b;
    for (std::size_t i = 0; i < d; ++i) z += w[i] * (s.features[i] - 0.5);
    ok += (z > 0.0) == (s.label == 1);
  }
  return static_cast<double>(ok) / data.size();
}

std::vector<Sample> two_blobs(std::uint64_t seed) {
  BlobSpec spec;
  spec.classes = 2;
  spec.points_per_class = 200;
  spec.dim = 2;
  spec.separation = 4.0;
  return generate_blobs(spec, seed);
}

double objective_at(const Mlp& m, const Vector& x, const Objective& obj) {
  return objective_value(m.predict_proba(x), obj);
}

}  // namespace

TEST_CASE("parameter count follows the layer sizes") {
  const Mlp m({5, 7, 3});
  CHECK(m.parameter_count() == 5 * 7 + 7 + 7 * 3 + 3);
  CHECK(m.input_dim() == 5);
  CHECK(m.num_classes() == 3);
  CHECK_THROWS(Mlp({5}));
}

TEST_CASE("zero-weight network predicts uniform") {
  const Mlp m({4, 8, 5});
  const auto p = m.predict_proba(Vector{0.1, 0.9, 0.3, 0.7});
  for (double v : p.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS(m.predict_proba(Vector{0.1, 0.2}));
}

TEST_CASE("lookup victim returns programmed cells exactly") {
  LookupVictim v(2, 4, ProbVector::uniform(3));
  v.set_cell({1, 2}, ProbVector({0.7, 0.2, 0.1}));
  const Victim victim = v;
  const auto p = predict_proba(victim, Vector{0.3, 0.6});
  CHECK(p[0] == 0.7);
  CHECK(p[1] == 0.2);
  CHECK(p[2] == 0.1);
  CHECK(predict_proba(victim, Vector{0.9, 0.9})[0] == doctest::Approx(1.0 / 3));
  CHECK(v.cell_of(Vector{1.0, 0.0}) == std::vector<int>{3, 0});
  CHECK_THROWS_AS(input_gradient(victim, Vector{0.3, 0.6}, {}), std::invalid_argument);
  CHECK_THROWS(v.set_cell({4, 0}, ProbVector::uniform(3)));
}

TEST_CASE("input gradients match central finite differences") {
  SeededRng rng(2024);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    SeededRng init = derive_stream(rng, "net", trial);
    const Mlp m = Mlp::initialized({2, 16, 16, 3}, init);
    Vector x{rng.uniform(), rng.uniform()};
    const int k = m.predict_proba(x).argmax();
    for (auto kind : {ObjectiveKind::kUnderconfidence, ObjectiveKind::kOverconfidence,
                      ObjectiveKind::kCrossEntropy}) {
      const Objective obj{kind, kind == ObjectiveKind::kCrossEntropy ? trial % 3 : k};
      const Vector g = m.input_gradient(x, obj);
      REQUIRE(g.size() == x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        Vector up = x, down = x;
        up[i] += h;
        down[i] -= h;
        const double fd = (objective_at(m, up, obj) - objective_at(m, down, obj)) / (2 * h);
        const double rel = std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        worst = std::max(worst, rel);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("saturated overconfidence objective has vanishing gradient") {
  Mlp m({2, 3});
  auto& layer = m.layers()[0];
  layer.weights = {40.0, 40.0, 0.0, 0.0, -40.0, 0.0};
  layer.bias = {20.0, 0.0, 0.0};
  const Vector x{0.5, 0.5};
  const auto p = m.predict_proba(x);
  REQUIRE(p.argmax() == 0);
  REQUIRE(p[0] > 1.0 - 1e-12);
  const auto g = m.input_gradient(x, {ObjectiveKind::kOverconfidence, 0});
  double norm = 0.0;
  for (double v : g) norm += v * v;
  CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("objective values") {
  const ProbVector p({0.7, 0.2, 0.1});
  CHECK(objective_value(p, {ObjectiveKind::kUnderconfidence, 0}) == doctest::Approx(0.5));
  CHECK(objective_value(p, {ObjectiveKind::kOverconfidence, 0}) == doctest::Approx(0.3));
  CHECK(objective_value(p, {ObjectiveKind::kCrossEntropy, 1}) == doctest::Approx(-std::log(0.2)));
  CHECK_THROWS(objective_value(p, {ObjectiveKind::kCrossEntropy, 3}));
}

TEST_CASE("two separated blobs are learned") {
  const auto data = two_blobs(3);
  CHECK(logistic_train_accuracy(data) >= 0.99);

  TrainConfig cfg;
  cfg.seed = 3;
  const Mlp m = train_mlp(data, cfg);
  CHECK(accuracy(Victim(m), data) >= 0.95);

  // High confidence at each class centroid.
  for (int c = 0; c < 2; ++c) {
    Vector centre(2, 0.0);
    int n = 0;
    for (const auto& s : data) {
      if (s.label != c) continue;
      for (int i = 0; i < 2; ++i) centre[i] += s.features[i];
      ++n;
    }
    for (double& v : centre) v /= n;
    const auto p = m.predict_proba(centre);
    CHECK(p.argmax() == c);
    CHECK(p.confidence() >= 0.9);
  }
}

TEST_CASE("training is deterministic under a seed") {
  const auto data = two_blobs(1);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.epochs = 5;
  const Mlp a = train_mlp(data, cfg);
  const Mlp b = train_mlp(data, cfg);
  CHECK(a == b);
  cfg.seed = 4;
  CHECK_FALSE(train_mlp(data, cfg) == a);
}

TEST_CASE("single-class data trains to that class") {
  std::vector<Sample> data;
  SeededRng rng(8);
  for (int i = 0; i < 50; ++i) data.push_back({{rng.uniform(), rng.uniform()}, 0});
  TrainConfig cfg;
  cfg.num_classes = 2;
  cfg.epochs = 5;
  const Mlp m = train_mlp(data, cfg);
  CHECK(m.num_classes() == 2);
  CHECK(accuracy(Victim(m), data) == 1.0);
}

TEST_CASE("full-batch training with a small step never increases the loss") {
  const auto data = two_blobs(5);
  TrainConfig cfg;
  cfg.batch_size = static_cast<int>(data.size());
  cfg.learning_rate = 1e-2;
  cfg.momentum = 0.0;
  cfg.epochs = 40;
  TrainHistory history;
  train_mlp(data, cfg, &history);
  REQUIRE(history.epoch_loss.size() == 40);
  for (std::size_t e = 1; e < history.epoch_loss.size(); ++e) {
    CHECK(history.epoch_loss[e] <= history.epoch_loss[e - 1]);
  }
}

TEST_CASE("training errors") {
  TrainConfig cfg;
  CHECK_THROWS(train_mlp(std::vector<Sample>{}, cfg));
  const auto data = two_blobs(5);
  cfg.learning_rate = 1e200;
  cfg.epochs = 3;
  CHECK_THROWS_AS(train_mlp(data, cfg), std::runtime_error);
  cfg = {};
  cfg.learning_rate = -1.0;
  CHECK_THROWS(train_mlp(data, cfg));
  cfg = {};
  cfg.num_classes = 1;
  CHECK_THROWS(train_mlp(data, cfg));
}

TEST_CASE("model files round-trip bit-exactly") {
  SeededRng rng(12);
  const Mlp m = Mlp::initialized({3, 5, 4, 2}, rng);
  std::stringstream buf;
  save_mlp(m, buf);
  const Mlp back = load_mlp(buf);
  CHECK(back == m);

  std::istringstream bad("calattack-mlp 9\n");
  CHECK_THROWS(load_mlp(bad));
  std::istringstream truncated("calattack-mlp 1\nlayers 2 3 2\n0x1p+0\n");
  CHECK_THROWS(load_mlp(truncated));
}
