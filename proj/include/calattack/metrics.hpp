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
#include <span>
#include <string>
#include <vector>

#include "calattack/core.hpp"

namespace calattack {

inline constexpr int kDefaultBins = 15;

// Equal-width bins over (0,1], right-closed. Confidence 0 goes to the first bin.
struct ReliabilityBins {
  struct Bin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
  };

  std::vector<Bin> bins;
  std::size_t total = 0;

  int num_bins() const { return static_cast<int>(bins.size()); }
  double ece() const;
};

// 1-based bin index for a confidence under B equal bins.
int bin_index(double confidence, int num_bins);

ReliabilityBins reliability_bins(std::span<const PredictionRecord> records,
                                 int num_bins = kDefaultBins);

double ece(std::span<const PredictionRecord> records, int num_bins = kDefaultBins);
double ks_error(std::span<const PredictionRecord> records);
double accuracy(std::span<const PredictionRecord> records);
double mean_confidence(std::span<const PredictionRecord> records);

// Largest ECE reachable by label-preserving attacks at accuracy q on a K-way task: 1 - q/K.
double max_ece_bound(double accuracy, int num_classes);

struct QueryStats {
  double mean = 0.0;
  double median = 0.0;
};

QueryStats query_stats(std::span<const PredictionRecord> records);

struct SummaryRow {
  std::string dataset;
  std::string kind;
  std::string norm;
  double epsilon = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double pre_ece = 0.0;
  double post_ece = 0.0;
  double pre_ks = 0.0;
  double post_ks = 0.0;
  double pre_confidence = 0.0;
  double post_confidence = 0.0;
  double avg_queries = 0.0;
  double median_queries = 0.0;
};

// Metric columns only; the descriptive columns are left for the caller.
SummaryRow summary(std::span<const PredictionRecord> pre, std::span<const PredictionRecord> post,
                   int num_bins = kDefaultBins);

const char* summary_csv_header();
void write_summary_csv_row(std::ostream& out, const SummaryRow& row);

}  // namespace calattack
