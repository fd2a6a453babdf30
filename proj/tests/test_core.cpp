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
#include <thread>
#include <vector>

#include "calattack/core.hpp"
#include "doctest.h"

using namespace calattack;

namespace {

std::vector<std::uint64_t> draws(SeededRng rng, int n) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(rng());
  return out;
}

class CountingOracle final : public ClassifierOracle {
 public:
  int input_dim() const override { return 1; }
  int num_classes() const override { return 2; }

 protected:
  ProbVector do_predict(std::span<const double>) const override { return ProbVector({0.6, 0.4}); }
};

}  // namespace

TEST_CASE("derive_stream is deterministic and distinguishes seed, tag and index") {
  const SeededRng seven(7);
  const auto a = draws(derive_stream(seven, "attack", 0), 100);
  CHECK(a == draws(derive_stream(seven, "attack", 0), 100));

  const auto b = draws(derive_stream(seven, "attack", 1), 100);
  const auto c = draws(derive_stream(SeededRng(8), "attack", 0), 100);
  const auto d = draws(derive_stream(seven, "train", 0), 100);
  int same_b = 0, same_c = 0, same_d = 0;
  for (int i = 0; i < 100; ++i) {
    same_b += a[i] == b[i];
    same_c += a[i] == c[i];
    same_d += a[i] == d[i];
  }
  CHECK(same_b == 0);
  CHECK(same_c == 0);
  CHECK(same_d == 0);
}

TEST_CASE("derived streams do not depend on how much the parent was used") {
  SeededRng parent(11);
  const auto before = draws(derive_stream(parent, "x", 3), 10);
  for (int i = 0; i < 50; ++i) parent();
  CHECK(before == draws(derive_stream(parent, "x", 3), 10));
}

TEST_CASE("SeededRng helpers stay in range and have the right moments") {
  SeededRng rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(0.25, 0.5);
    REQUIRE(u >= 0.25);
    REQUIRE(u < 0.5);
    const int k = rng.uniform_int(-2, 3);
    REQUIRE(k >= -2);
    REQUIRE(k <= 3);
    const double z = rng.normal(1.0, 2.0);
    sum += z;
    sq += (z - 1.0) * (z - 1.0);
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::sqrt(sq / n) == doctest::Approx(2.0).epsilon(0.01));
  CHECK(rng.uniform_int(4, 4) == 4);
}

TEST_CASE("clip_to_ball examples") {
  const Sample s{{0.2, 0.5, 0.98}, 0};
  const AttackBudget linf;  // eps 0.05

  SUBCASE("identity") { CHECK(clip_to_ball(s, s.features, linf) == s.features); }

  SUBCASE("linf clips one coordinate to original + eps, then to the cube") {
    Vector c = s.features;
    c[0] += 0.2;
    auto out = clip_to_ball(s, c, linf);
    CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(out[1] == s.features[1]);
    c = s.features;
    c[2] += 0.2;
    out = clip_to_ball(s, c, linf);
    CHECK(out[2] == 1.0);
  }

  SUBCASE("l2 rescales an over-long perturbation") {
    const Sample mid{Vector(100, 0.5), 0};
    Vector c = mid.features;
    // ||delta||_2 = 10 with every coordinate staying inside [0,1] after halving.
    for (double& v : c) v += 1.0;
    const auto out = clip_to_ball(mid, c, AttackBudget::l2_default());
    CHECK(l2_distance(out, mid.features) == doctest::Approx(5.0).epsilon(1e-12));
    for (double v : out) CHECK(v == doctest::Approx(1.0));
  }

  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(clip_to_ball(s, Vector{0.1, 0.2}, linf), std::invalid_argument);
  }
}

TEST_CASE("clip_to_ball output is always inside the ball and the cube") {
  SeededRng rng(99);
  for (int trial = 0; trial < 2000; ++trial) {
    const int d = rng.uniform_int(1, 20);
    Vector x(d), c(d);
    for (int i = 0; i < d; ++i) {
      x[i] = rng.uniform();
      c[i] = rng.uniform(-1.0, 2.0);
    }
    AttackBudget b;
    b.norm = rng.coin() ? Norm::kLinf : Norm::kL2;
    b.epsilon = rng.uniform(0.01, b.norm == Norm::kLinf ? 0.5 : 3.0);
    const auto out = clip_to_ball(x, c, b);
    REQUIRE(out.size() == x.size());
    CHECK(distance(b.norm, out, x) <= b.epsilon + 1e-9);
    for (double v : out) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // Already feasible points come back unchanged.
    CHECK(clip_to_ball(x, out, b) == out);
  }
}

TEST_CASE("ProbVector validation") {
  CHECK_THROWS_AS(ProbVector({0.5, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(ProbVector({1.0}), std::invalid_argument);
  CHECK_THROWS_AS(ProbVector({1.2, -0.2}), std::invalid_argument);
  CHECK_THROWS_AS(ProbVector({NAN, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(ProbVector({0.5, 0.5 + 2e-6}), std::invalid_argument);

  const ProbVector p({0.5, 0.5 + 5e-7});
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(p[0] + p[1] - 1.0) <= 1e-9);

  const ProbVector tie({0.4, 0.4, 0.2});
  CHECK(tie.argmax() == 0);
  CHECK(tie.confidence() == 0.4);
  CHECK(tie.argmax_excluding(0) == 1);
  CHECK(tie.max_excluding(0) == 0.4);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  SeededRng rng(1);
  for (int t = 0; t < 500; ++t) {
    Vector z(rng.uniform_int(2, 10));
    for (double& v : z) v = rng.normal(0.0, 20.0);
    const auto p = ProbVector::softmax(z);
    double sum = 0.0;
    for (double v : p.values()) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    Vector shifted = z;
    for (double& v : shifted) v += 123.0;
    CHECK(ProbVector::softmax(shifted).argmax() == p.argmax());
  }
}

TEST_CASE("query counter counts every predict across threads") {
  CountingOracle oracle;
  const Vector x{0.5};
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t) {
    pool.emplace_back([&] {
      for (int i = 0; i < 1250; ++i) oracle.predict(x);
    });
  }
  for (auto& th : pool) th.join();
  CHECK(oracle.query_count() == 10000);
}

TEST_CASE("AttackBudget validation and defaults") {
  CHECK_NOTHROW(AttackBudget{}.validate());
  const auto l2 = AttackBudget::l2_default();
  CHECK(l2.epsilon == 5.0);
  CHECK(l2.patch_fraction == 0.1);
  AttackBudget b;
  b.epsilon = 0.0;
  CHECK_THROWS(b.validate());
  b = {};
  b.patch_fraction = 1.5;
  CHECK_THROWS(b.validate());
  b = {};
  b.max_iterations = 0;
  CHECK_THROWS(b.validate());
  CHECK(parse_norm("linf") == Norm::kLinf);
  CHECK(parse_norm("l2") == Norm::kL2);
  CHECK_THROWS(parse_norm("l1"));
}

TEST_CASE("validate_sample") {
  CHECK_NOTHROW(validate_sample({{0.0, 1.0}, 1}, 2));
  CHECK_THROWS(validate_sample({{0.0, 1.1}, 1}, 2));
  CHECK_THROWS(validate_sample({{0.0, 1.0}, 2}, 2));
}
