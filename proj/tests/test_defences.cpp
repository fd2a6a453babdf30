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
#include <filesystem>

#include "calattack/defences.hpp"
#include "calattack/harness.hpp"
#include "doctest.h"

using namespace calattack;

namespace {

struct LabelledLogits {
  std::vector<Vector> logits;
  std::vector<int> labels;
};

// Labels drawn from softmax(z), so the raw logits are calibrated; returned logits are scale * z.
LabelledLogits self_consistent(std::size_t n, int k, double scale, std::uint64_t seed) {
  SeededRng rng(seed);
  LabelledLogits out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector z(static_cast<std::size_t>(k));
    for (double& v : z) v = rng.normal(0.0, 2.0);
    const ProbVector p = ProbVector::softmax(z);
    double u = rng.uniform();
    int label = k - 1;
    for (int j = 0; j < k; ++j) {
      u -= p[static_cast<std::size_t>(j)];
      if (u < 0.0) {
        label = j;
        break;
      }
    }
    for (double& v : z) v *= scale;
    out.logits.push_back(std::move(z));
    out.labels.push_back(label);
  }
  return out;
}

DataSplits toy_splits(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  return build_splits(cfg);
}

}  // namespace

TEST_CASE("temperature scaling recovers the logit scale") {
  const auto unit = self_consistent(5000, 5, 1.0, 1);
  const double t1 = fit_temperature(unit.logits, unit.labels).temperature;
  CHECK(std::abs(t1 - 1.0) <= 0.1);

  const auto doubled = self_consistent(5000, 5, 2.0, 2);
  const auto fit = fit_temperature(doubled.logits, doubled.labels);
  CHECK(std::abs(fit.temperature - 2.0) <= 0.1);
  CHECK(fit.temperature > 0.0);
  CHECK(mean_nll(doubled.logits, doubled.labels, fit.temperature) <=
        mean_nll(doubled.logits, doubled.labels, 1.0) + 1e-9);
  CHECK_THROWS(fit_temperature(std::vector<Vector>{}, std::vector<int>{}));
}

TEST_CASE("temperature never makes NLL worse than identity") {
  SeededRng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto data = self_consistent(40, 3, rng.uniform(0.1, 6.0), 100 + trial);
    const auto fit = fit_temperature(data.logits, data.labels);
    CHECK(fit.temperature > 0.0);
    CHECK(mean_nll(data.logits, data.labels, fit.temperature) <=
          mean_nll(data.logits, data.labels, 1.0) + 1e-9);
  }
}

TEST_CASE("tempered argmax never changes") {
  SeededRng rng(6);
  for (int i = 0; i < 2000; ++i) {
    Vector z(static_cast<std::size_t>(rng.uniform_int(2, 12)));
    for (double& v : z) v = rng.normal(0.0, 3.0);
    const int k = ProbVector::softmax(z).argmax();
    CHECK(temper(z, rng.uniform(0.05, 20.0)).argmax() == k);
  }
}

TEST_CASE("compression map endpoints and slots") {
  const CSConfig cfg;
  CHECK(compressed_confidence(0.0, cfg) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(compressed_confidence(1.0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  // First source bin of each block lands on the lower edge of its target bin.
  CHECK(compressed_confidence(5.0 / 15, cfg) == doctest::Approx(13.0 / 15).epsilon(1e-12));
  CHECK(compressed_confidence(10.0 / 15, cfg) == doctest::Approx(14.0 / 15).epsilon(1e-12));
  CHECK(compressed_confidence(0.5, cfg) == doctest::Approx(0.9).epsilon(1e-12));

  for (int b = 1; b <= 15; ++b) {
    const double lower = (b - 1) / 15.0;
    const auto slot = compression_slot(std::nextafter(lower, 1.0), cfg);
    CHECK(slot.source_bin == b);
    CHECK(slot.target_bin == 13 + (b - 1) / 5);
    CHECK(compressed_confidence(slot.source_lower, cfg) == doctest::Approx(slot.slot_lower).epsilon(1e-12));
  }
}

TEST_CASE("compression map is monotone") {
  for (const CSConfig cfg : {CSConfig{}, CSConfig{15, 4}, CSConfig{10, 3}, CSConfig{7, 7}}) {
    double prev = -1.0;
    for (int i = 0; i <= 10000; ++i) {
      const double p = i / 10000.0;
      const double q = compressed_confidence(p, cfg);
      CHECK(q >= prev);
      CHECK((q >= 0.0 && q <= 1.0));
      prev = q;
    }
  }
  CHECK_THROWS(compressed_confidence(0.5, CSConfig{15, 16}));
}

TEST_CASE("compression scaling keeps argmax and hits the slot") {
  const CSConfig cfg;
  SeededRng rng(8);
  int converged = 0;
  for (int i = 0; i < 1000; ++i) {
    Vector z(static_cast<std::size_t>(rng.uniform_int(2, 10)));
    for (double& v : z) v = rng.normal(0.0, 2.5);
    const ProbVector raw = ProbVector::softmax(z);
    const auto out = compression_scale(z, cfg);
    CHECK(out.probs.argmax() == raw.argmax());
    CHECK(out.temperature > 0.0);
    CHECK(out.target == doctest::Approx(compressed_confidence(raw.confidence(), cfg)));
    if (out.converged) {
      ++converged;
      const auto slot = compression_slot(raw.confidence(), cfg);
      CHECK(out.probs.confidence() >= slot.slot_lower - 1e-4);
      CHECK(out.probs.confidence() <= slot.slot_upper + 1e-4);
    }
  }
  CHECK(converged > 950);
}

TEST_CASE("post-hoc oracles preserve predictions") {
  const auto splits = toy_splits(3);
  TrainConfig tc;
  tc.epochs = 5;
  auto model = std::make_shared<const Mlp>(train_mlp(splits.train, tc));
  const TemperatureOracle ts(model, TemperatureModel{3.0});
  const CompressionOracle cs(model, CSConfig{});
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& x = splits.test[i].features;
    const int k = model->predict_proba(x).argmax();
    CHECK(ts.predict(x).argmax() == k);
    CHECK(cs.predict(x).argmax() == k);
    CHECK(cs.predict(x).confidence() > 0.8 - 1e-4);
  }
  CHECK(ts.query_count() == 200);
}

TEST_CASE("CAAT without attack iterations trains like the plain victim") {
  const auto splits = toy_splits(5);
  TrainConfig tc;
  tc.epochs = 10;
  WhiteBoxSettings wb;
  wb.iterations = 0;
  const double plain = accuracy(Victim(train_mlp(splits.train, tc)), splits.test);
  const double caat = accuracy(Victim(caat_train(splits.train, tc, wb)), splits.test);
  CHECK(std::abs(plain - caat) <= 0.02);
}

TEST_CASE("CAAT copies keep the model's prediction") {
  const auto splits = toy_splits(6);
  TrainConfig tc;
  tc.epochs = 3;
  const Mlp m = train_mlp(splits.train, tc);
  const VictimOracle oracle{Victim(m)};
  const WhiteBoxSettings wb;
  for (std::size_t i = 0; i < 100; ++i) {
    for (AttackKind kind : {AttackKind::kUCA, AttackKind::kOCA}) {
      SeededRng rng = derive_stream(SeededRng(1), "copy", i);
      const auto t = pgd_calibration_attack(oracle, splits.train[i], kind, wb, rng);
      CHECK(m.predict_proba(t.adversarial_features).argmax() == t.pre_label);
    }
  }
}

TEST_CASE("adversarial training") {
  const auto splits = toy_splits(7);
  TrainConfig tc;
  tc.epochs = 10;

  SUBCASE("zero PGD steps is plain training") {
    PgdTrainSettings pgd;
    pgd.iterations = 0;
    CHECK(adversarial_train(splits.train, tc, pgd) == train_mlp(splits.train, tc));
  }
  SUBCASE("perturbations stay in the 0.1 ball") {
    const Mlp m = train_mlp(splits.train, tc);
    const PgdTrainSettings pgd;
    SeededRng rng(2);
    for (std::size_t i = 0; i < 200; ++i) {
      const Vector x = pgd_cross_entropy(m, splits.train[i], pgd, rng);
      CHECK(linf_distance(x, splits.train[i].features) <= 0.1 + 1e-12);
      for (double v : x) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
  SUBCASE("robust training costs clean accuracy") {
    const double plain = accuracy(Victim(train_mlp(splits.train, tc)), splits.test);
    const double robust = accuracy(Victim(adversarial_train(splits.train, tc, PgdTrainSettings{})),
                                   splits.test);
    CHECK(robust <= plain);
  }
}

TEST_CASE("defence sidecar round-trips") {
  DefenceParams p;
  p.kind = "ts";
  p.ts.temperature = 1.2345678901234567;
  p.cs.target_bins = 4;
  const auto back = defence_from_json(defence_to_json(p));
  CHECK(back.kind == "ts");
  CHECK(back.ts.temperature == p.ts.temperature);
  CHECK(back.cs.target_bins == 4);

  const auto path = std::filesystem::temp_directory_path() / "calattack_sidecar_test.json";
  save_defence(p, path.string());
  CHECK(load_defence(path.string()).ts.temperature == p.ts.temperature);
  std::filesystem::remove(path);

  CHECK_THROWS(defence_from_json("{\"format\": \"other\"}"));
  CHECK_THROWS(defence_from_json(
      "{\"format\":\"calattack-defence\",\"version\":1,\"kind\":\"spline\",\"temperature\":1}"));
}
