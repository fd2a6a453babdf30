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
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "calattack/harness.hpp"

namespace calattack {

namespace {

// Two orthonormal directions spanning the plane the class centres live in.
std::pair<Vector, Vector> centre_plane(int dim, SeededRng& rng) {
  Vector u(static_cast<std::size_t>(dim));
  Vector v(static_cast<std::size_t>(dim));
  for (auto& x : u) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  auto normalize = [](Vector& w) {
    double n = 0.0;
    for (double x : w) n += x * x;
    n = std::sqrt(n);
    for (double& x : w) x /= n;
  };
  normalize(u);
  if (dim == 1) return {u, Vector(1, 0.0)};
  double dot = 0.0;
  for (int i = 0; i < dim; ++i) dot += u[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
  for (int i = 0; i < dim; ++i) v[static_cast<std::size_t>(i)] -= dot * u[static_cast<std::size_t>(i)];
  normalize(v);
  return {u, v};
}

}  // namespace

std::vector<Sample> generate_blobs(const BlobSpec& spec, std::uint64_t seed) {
  return generate_blobs(spec, seed, seed);
}

std::vector<Sample> generate_blobs(const BlobSpec& spec, std::uint64_t layout_seed,
                                   std::uint64_t noise_seed) {
  if (spec.classes < 2) throw std::invalid_argument("generate_blobs: need at least 2 classes");
  if (spec.dim < 1) throw std::invalid_argument("generate_blobs: dim must be positive");
  if (spec.points_per_class < 1) throw std::invalid_argument("generate_blobs: no points");
  if (!(spec.spread > 0.0) || !(spec.separation >= 0.0)) {
    throw std::invalid_argument("generate_blobs: spread must be positive, separation >= 0");
  }
  const SeededRng root(noise_seed);
  SeededRng plane_rng = derive_stream(SeededRng(layout_seed), "plane", 0);
  const auto [u, v] = centre_plane(spec.dim, plane_rng);
  const double radius = spec.separation * spec.spread;

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.classes * spec.points_per_class));
  for (int c = 0; c < spec.classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / spec.classes;
    Vector centre(static_cast<std::size_t>(spec.dim), 0.5);
    for (std::size_t i = 0; i < centre.size(); ++i) {
      centre[i] += radius * (std::cos(angle) * u[i] + std::sin(angle) * v[i]);
    }
    SeededRng rng = derive_stream(root, "class", static_cast<std::uint64_t>(c));
    for (int n = 0; n < spec.points_per_class; ++n) {
      Sample s;
      s.label = c;
      s.features.resize(centre.size());
      for (std::size_t i = 0; i < centre.size(); ++i) {
        s.features[i] = std::clamp(rng.normal(centre[i], spec.spread), 0.0, 1.0);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> parse_csv(std::istream& in, const std::string& source) {
  std::vector<Sample> out;
  std::string line;
  std::size_t row = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    auto where = [&] { return source + ":" + std::to_string(row); };
    if (cells.size() < 2) throw std::runtime_error(where() + ": need at least one feature and a label");
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw std::runtime_error(where() + ": expected " + std::to_string(width) + " columns, got " +
                               std::to_string(cells.size()));
    }
    Sample s;
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0' || !std::isfinite(v)) {
        throw std::runtime_error(where() + ": column " + std::to_string(i + 1) + " is not a number");
      }
      if (v < 0.0 || v > 1.0) {
        throw std::runtime_error(where() + ": feature " + std::to_string(i + 1) + " = " +
                                 cells[i] + " outside [0,1]");
      }
      s.features.push_back(v);
    }
    char* end = nullptr;
    const long label = std::strtol(cells.back().c_str(), &end, 10);
    if (end == cells.back().c_str() || *end != '\0' || label < 0) {
      throw std::runtime_error(where() + ": label '" + cells.back() + "' is not a class index");
    }
    s.label = static_cast<int>(label);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error(source + ": no samples");
  return out;
}

std::vector<Sample> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_csv(in, path);
}

void corrupt_labels(std::vector<Sample>& samples, double fraction, int num_classes,
                    std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("label noise outside [0,1]");
  if (fraction == 0.0) return;
  const auto count = static_cast<std::size_t>(std::lround(fraction * samples.size()));
  const auto picked = draw_subset(samples.size(), count, seed);
  SeededRng rng = derive_stream(SeededRng(seed), "relabel", 0);
  for (std::size_t i : picked) {
    const int shift = rng.uniform_int(1, num_classes - 1);
    samples[i].label = (samples[i].label + shift) % num_classes;
  }
}

std::vector<std::size_t> draw_subset(std::size_t population, std::size_t count, std::uint64_t seed) {
  if (count > population) throw std::invalid_argument("subset larger than population");
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  SeededRng rng = derive_stream(SeededRng(seed), "subset", 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(
                           rng.uniform_int(0, static_cast<int>(population - i - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace calattack
