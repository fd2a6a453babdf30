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

#include "calattack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace calattack {

namespace {

void require_records(std::span<const PredictionRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": empty record set");
}

void require_bins(int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("num_bins must be at least 1");
}

}  // namespace

int bin_index(double confidence, int num_bins) {
  require_bins(num_bins);
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw std::invalid_argument("confidence outside [0,1]: " + std::to_string(confidence));
  }
  const double B = num_bins;
  int b = std::clamp(static_cast<int>(std::ceil(confidence * B)), 1, num_bins);
  // Product rounding can push a value sitting on an edge one bin too far either way.
  while (b > 1 && confidence <= static_cast<double>(b - 1) / B) --b;
  while (b < num_bins && confidence > static_cast<double>(b) / B) ++b;
  return b;
}

double ReliabilityBins::ece() const {
  if (total == 0) throw std::invalid_argument("ece: empty bins");
  double sum = 0.0;
  for (const auto& bin : bins) {
    if (bin.count == 0) continue;
    sum += static_cast<double>(bin.count) / static_cast<double>(total) *
           std::abs(bin.accuracy - bin.mean_confidence);
  }
  return sum;
}

ReliabilityBins reliability_bins(std::span<const PredictionRecord> records, int num_bins) {
  require_records(records, "reliability_bins");
  require_bins(num_bins);
  ReliabilityBins out;
  out.total = records.size();
  out.bins.resize(static_cast<std::size_t>(num_bins));
  std::vector<double> conf_sum(out.bins.size(), 0.0);
  std::vector<std::size_t> hits(out.bins.size(), 0);
  for (const auto& r : records) {
    const auto m = static_cast<std::size_t>(bin_index(r.confidence, num_bins) - 1);
    ++out.bins[m].count;
    conf_sum[m] += r.confidence;
    hits[m] += r.correct();
  }
  for (std::size_t m = 0; m < out.bins.size(); ++m) {
    auto& bin = out.bins[m];
    bin.lower = static_cast<double>(m) / num_bins;
    bin.upper = static_cast<double>(m + 1) / num_bins;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[m] / static_cast<double>(bin.count);
      bin.accuracy = static_cast<double>(hits[m]) / static_cast<double>(bin.count);
    }
  }
  return out;
}

double ece(std::span<const PredictionRecord> records, int num_bins) {
  return reliability_bins(records, num_bins).ece();
}

double ks_error(std::span<const PredictionRecord> records) {
  require_records(records, "ks_error");
  std::vector<PredictionRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.confidence < b.confidence; });
  const double n = static_cast<double>(sorted.size());
  double h = 0.0;
  double h_conf = 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    h += (sorted[i].correct() ? 1.0 : 0.0) / n;
    h_conf += sorted[i].confidence / n;
    // Tied confidences form one step of the cumulative curves.
    if (i + 1 < sorted.size() && sorted[i + 1].confidence == sorted[i].confidence) continue;
    worst = std::max(worst, std::abs(h - h_conf));
  }
  return worst;
}

double accuracy(std::span<const PredictionRecord> records) {
  require_records(records, "accuracy");
  const auto hits = std::count_if(records.begin(), records.end(),
                                  [](const auto& r) { return r.correct(); });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_confidence(std::span<const PredictionRecord> records) {
  require_records(records, "mean_confidence");
  double s = 0.0;
  for (const auto& r : records) s += r.confidence;
  return s / static_cast<double>(records.size());
}

double max_ece_bound(double accuracy, int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("max_ece_bound: K must be at least 2");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw std::invalid_argument("max_ece_bound: accuracy outside [0,1]");
  }
  return 1.0 - accuracy / num_classes;
}

QueryStats query_stats(std::span<const PredictionRecord> records) {
  require_records(records, "query_stats");
  std::vector<double> q;
  q.reserve(records.size());
  for (const auto& r : records) q.push_back(static_cast<double>(r.queries_used));
  std::sort(q.begin(), q.end());
  QueryStats stats;
  stats.mean = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
  const std::size_t mid = q.size() / 2;
  stats.median = q.size() % 2 ? q[mid] : 0.5 * (q[mid - 1] + q[mid]);
  return stats;
}

SummaryRow summary(std::span<const PredictionRecord> pre, std::span<const PredictionRecord> post,
                   int num_bins) {
  require_records(pre, "summary");
  if (pre.size() != post.size()) throw std::invalid_argument("summary: misaligned record lists");
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (pre[i].true_label != post[i].true_label) {
      throw std::invalid_argument("summary: record " + std::to_string(i) + " has mismatched labels");
    }
  }
  SummaryRow row;
  row.accuracy = accuracy(pre);
  if (accuracy(post) != row.accuracy) {
    throw std::invalid_argument("summary: accuracy changed under attack");
  }
  row.pre_ece = ece(pre, num_bins);
  row.post_ece = ece(post, num_bins);
  row.pre_ks = ks_error(pre);
  row.post_ks = ks_error(post);
  row.pre_confidence = mean_confidence(pre);
  row.post_confidence = mean_confidence(post);
  const QueryStats q = query_stats(post);
  row.avg_queries = q.mean;
  row.median_queries = q.median;
  return row;
}

const char* summary_csv_header() {
  return "dataset,kind,norm,epsilon,iterations,seed,acc,pre_ece,post_ece,pre_ks,post_ks,"
         "pre_conf,post_conf,avg_q,med_q";
}

void write_summary_csv_row(std::ostream& out, const SummaryRow& row) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  out << row.dataset << ',' << row.kind << ',' << row.norm << ',' << num(row.epsilon) << ','
      << row.iterations << ',' << row.seed << ',' << num(row.accuracy) << ',' << num(row.pre_ece)
      << ',' << num(row.post_ece) << ',' << num(row.pre_ks) << ',' << num(row.post_ks) << ','
      << num(row.pre_confidence) << ',' << num(row.post_confidence) << ','
      << num(row.avg_queries) << ',' << num(row.median_queries) << '\n';
}

}  // namespace calattack
