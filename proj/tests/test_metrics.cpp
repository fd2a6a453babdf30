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

#include <algorithm>
#include <cmath>
#include <sstream>

#include "calattack/metrics.hpp"
#include "doctest.h"

using namespace calattack;

namespace {

PredictionRecord rec(double conf, bool correct, std::uint64_t q = 0) {
  return {0, correct ? 0 : 1, conf, q};
}

// Bin membership decided by direct comparison with the edges m/B.
double brute_ece(const std::vector<PredictionRecord>& rs, int B) {
  double total = 0.0;
  for (int m = 1; m <= B; ++m) {
    const double lo = static_cast<double>(m - 1) / B;
    const double hi = static_cast<double>(m) / B;
    std::size_t n = 0, hits = 0;
    double conf = 0.0;
    for (const auto& r : rs) {
      const bool in = (r.confidence > lo && r.confidence <= hi) || (m == 1 && r.confidence == 0.0);
      if (!in) continue;
      ++n;
      hits += r.correct();
      conf += r.confidence;
    }
    if (n == 0) continue;
    total += static_cast<double>(n) / rs.size() *
             std::abs(static_cast<double>(hits) / n - conf / n);
  }
  return total;
}

// Largest gap between cumulative correctness and cumulative confidence over all thresholds.
double brute_ks(const std::vector<PredictionRecord>& rs) {
  double worst = 0.0;
  for (const auto& t : rs) {
    double h = 0.0, hc = 0.0;
    for (const auto& r : rs) {
      if (r.confidence > t.confidence) continue;
      h += r.correct() ? 1.0 : 0.0;
      hc += r.confidence;
    }
    worst = std::max(worst, std::abs(h - hc) / rs.size());
  }
  return worst;
}

std::vector<PredictionRecord> random_records(SeededRng& rng, int max_n, int K) {
  std::vector<PredictionRecord> rs(static_cast<std::size_t>(rng.uniform_int(1, max_n)));
  for (auto& r : rs) {
    // Mix continuous values with exact bin edges and repeated values.
    const int mode = rng.uniform_int(0, 2);
    if (mode == 0) {
      r.confidence = rng.uniform(1.0 / K, 1.0);
    } else if (mode == 1) {
      r.confidence = std::max(1.0 / K, static_cast<double>(rng.uniform_int(0, 15)) / 15.0);
    } else {
      r.confidence = 0.9;
    }
    r.true_label = rng.uniform_int(0, K - 1);
    r.predicted_label = rng.coin() ? r.true_label : (r.true_label + 1) % K;
  }
  return rs;
}

}  // namespace

TEST_CASE("ece examples") {
  CHECK(ece(std::vector{rec(1.0, true), rec(1.0, true)}) == 0.0);
  CHECK(ece(std::vector{rec(0.95, true), rec(0.95, false)}, 1) == doctest::Approx(0.45).epsilon(1e-14));
  // Extreme split: q at 1/K correct, 1-q at 1.0 wrong.
  const int K = 4;
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 70; ++i) rs.push_back(rec(1.0 / K, true));
  for (int i = 0; i < 30; ++i) rs.push_back(rec(1.0, false));
  CHECK(ece(rs) == doctest::Approx(1.0 - 0.7 / K).epsilon(1e-12));
  CHECK_THROWS(ece(std::vector<PredictionRecord>{}));
  CHECK_THROWS(ece(rs, 0));
}

TEST_CASE("ks examples") {
  CHECK(ks_error(std::vector{rec(0.7, true)}) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(ks_error(std::vector{rec(0.5, false), rec(1.0, true)}) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(ks_error(std::vector{rec(1.0, true), rec(1.0, true)}) == 0.0);
  CHECK_THROWS(ks_error(std::vector<PredictionRecord>{}));
}

TEST_CASE("bin boundaries are right-closed") {
  CHECK(bin_index(1.0, 15) == 15);
  CHECK(bin_index(2.0 / 15.0, 15) == 2);
  CHECK(bin_index(0.0, 15) == 1);
  CHECK(bin_index(1.0 / 15.0 + 1e-15, 15) == 2);
  for (int B : {1, 3, 10, 15, 100}) {
    for (int m = 1; m <= B; ++m) {
      const double edge = static_cast<double>(m) / B;
      CHECK(bin_index(edge, B) == m);
      if (m < B) CHECK(bin_index(std::nextafter(edge, 2.0), B) == m + 1);
    }
  }
  CHECK_THROWS(bin_index(1.5, 15));
}

TEST_CASE("reliability bins partition the records and agree with ece") {
  SeededRng rng(3);
  for (int t = 0; t < 300; ++t) {
    const auto rs = random_records(rng, 200, 5);
    const int B = rng.uniform_int(1, 20);
    const auto bins = reliability_bins(rs, B);
    std::size_t total = 0;
    for (const auto& bin : bins.bins) {
      total += bin.count;
      if (bin.count == 0) continue;
      CHECK(bin.mean_confidence >= bin.lower - 1e-12);
      CHECK(bin.mean_confidence <= bin.upper + 1e-12);
    }
    CHECK(total == rs.size());
    CHECK(std::abs(bins.ece() - ece(rs, B)) <= 1e-12);
  }
}

TEST_CASE("ece and ks match brute-force recomputation on small sets") {
  SeededRng rng(17);
  for (int t = 0; t < 1000; ++t) {
    const auto rs = random_records(rng, 12, rng.uniform_int(2, 10));
    CHECK(std::abs(ece(rs, 15) - brute_ece(rs, 15)) <= 1e-12);
    CHECK(std::abs(ks_error(rs) - brute_ks(rs)) <= 1e-12);
  }
}

TEST_CASE("metric ranges, permutation invariance and the MMA ceiling") {
  SeededRng rng(23);
  for (int t = 0; t < 1000; ++t) {
    const int K = rng.uniform_int(2, 20);
    auto rs = random_records(rng, 60, K);
    const double e = ece(rs);
    const double ks = ks_error(rs);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    CHECK(ks >= 0.0);
    CHECK(ks <= 1.0);
    CHECK(e <= max_ece_bound(accuracy(rs), K) + 1.0 / 15 + 1e-12);
    std::shuffle(rs.begin(), rs.end(), rng);
    CHECK(std::abs(ks_error(rs) - ks) <= 1e-12);
  }
}

TEST_CASE("perfectly calibrated records score near zero") {
  std::vector<PredictionRecord> rs;
  for (int g = 0; g < 10; ++g) {
    const double conf = 0.1 + 0.09 * g;
    const int n = 1000;
    const int hits = static_cast<int>(std::lround(conf * n));
    for (int i = 0; i < n; ++i) rs.push_back(rec(conf, i < hits));
  }
  CHECK(ece(rs) <= 0.02);
  CHECK(ks_error(rs) <= 0.02);
}

TEST_CASE("max ece bound") {
  CHECK(max_ece_bound(0.881, 100) == doctest::Approx(0.99119).epsilon(1e-12));
  CHECK(max_ece_bound(0.0, 10) == 1.0);
  CHECK(max_ece_bound(1.0, 2) == 0.5);
  CHECK_THROWS(max_ece_bound(0.5, 1));
  CHECK_THROWS(max_ece_bound(1.5, 3));
}

TEST_CASE("summary rows") {
  const std::vector pre{rec(0.9, true), rec(0.8, false), rec(0.7, true)};
  SUBCASE("unchanged records") {
    const auto row = summary(pre, pre);
    CHECK(row.pre_ece == row.post_ece);
    CHECK(row.pre_ks == row.post_ks);
    CHECK(row.pre_confidence == row.post_confidence);
    CHECK(row.avg_queries == 0.0);
    CHECK(row.median_queries == 0.0);
    CHECK(row.accuracy == doctest::Approx(2.0 / 3));
  }
  SUBCASE("query statistics") {
    const std::vector post{rec(0.5, true, 1), rec(0.95, false, 2), rec(0.4, true, 100)};
    const auto row = summary(pre, post);
    CHECK(row.avg_queries == doctest::Approx(34.3333).epsilon(1e-4));
    CHECK(row.median_queries == 2.0);
    CHECK(query_stats(std::vector{rec(1, true, 4), rec(1, true, 1)}).median == 2.5);
  }
  SUBCASE("contract violations") {
    const std::vector flipped{rec(0.9, true), rec(0.8, true), rec(0.7, true)};
    CHECK_THROWS(summary(pre, flipped));
    CHECK_THROWS(summary(pre, std::vector{rec(0.9, true)}));
  }
}

TEST_CASE("csv row layout") {
  SummaryRow row;
  row.dataset = "blobs";
  row.kind = "MMA";
  row.norm = "linf";
  row.epsilon = 0.05;
  row.iterations = 1000;
  row.seed = 7;
  row.accuracy = 0.5;
  row.avg_queries = 34.333333333;
  std::ostringstream out;
  write_summary_csv_row(out, row);
  CHECK(std::string(summary_csv_header()) ==
        "dataset,kind,norm,epsilon,iterations,seed,acc,pre_ece,post_ece,pre_ks,post_ks,pre_conf,"
        "post_conf,avg_q,med_q");
  CHECK(out.str() ==
        "blobs,MMA,linf,0.050000,1000,7,0.500000,0.000000,0.000000,0.000000,0.000000,0.000000,"
        "0.000000,34.333333,0.000000\n");
}
