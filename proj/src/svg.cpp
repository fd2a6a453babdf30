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
#include <cstdio>
#include <fstream>
#include <sstream>

#include "calattack/harness.hpp"
#include "json.hpp"

namespace calattack {

namespace {

constexpr double kPanel = 360.0;   // plot area side
constexpr double kMargin = 50.0;
constexpr double kGap = 60.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void panel(std::ostringstream& out, const ReliabilityBins& bins, double x0, const char* title) {
  const double y0 = kMargin;
  auto px = [&](double c) { return x0 + c * kPanel; };
  auto py = [&](double a) { return y0 + (1.0 - a) * kPanel; };

  out << "  <g>\n";
  out << "    <text x=\"" << fmt(x0 + kPanel / 2) << "\" y=\"" << fmt(y0 - 15)
      << "\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  out << "    <rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(kPanel)
      << "\" height=\"" << fmt(kPanel) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (const auto& bin : bins.bins) {
    if (bin.count == 0) continue;
    const double w = (bin.upper - bin.lower) * kPanel;
    // Accuracy bar, then the gap to the bin's mean confidence.
    out << "    <rect class=\"acc\" x=\"" << fmt(px(bin.lower)) << "\" y=\"" << fmt(py(bin.accuracy))
        << "\" width=\"" << fmt(w) << "\" height=\"" << fmt(bin.accuracy * kPanel)
        << "\" fill=\"#d62728\" fill-opacity=\"0.8\" stroke=\"#222\"/>\n";
    const double top = std::max(bin.accuracy, bin.mean_confidence);
    const double bottom = std::min(bin.accuracy, bin.mean_confidence);
    out << "    <rect class=\"gap\" x=\"" << fmt(px(bin.lower)) << "\" y=\"" << fmt(py(top))
        << "\" width=\"" << fmt(w) << "\" height=\"" << fmt((top - bottom) * kPanel)
        << "\" fill=\"#1f77b4\" fill-opacity=\"0.3\" stroke=\"#1f77b4\"/>\n";
  }
  out << "    <line x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\"" << fmt(px(1))
      << "\" y2=\"" << fmt(py(1)) << "\" stroke=\"#555\" stroke-dasharray=\"6,4\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    out << "    <text x=\"" << fmt(px(v)) << "\" y=\"" << fmt(py(0) + 18)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(v) << "</text>\n";
    out << "    <text x=\"" << fmt(x0 - 6) << "\" y=\"" << fmt(py(v) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v) << "</text>\n";
  }
  out << "    <text x=\"" << fmt(x0 + kPanel / 2) << "\" y=\"" << fmt(py(0) + 36)
      << "\" text-anchor=\"middle\" font-size=\"12\">confidence</text>\n";
  out << "    <text x=\"" << fmt(x0 + 12) << "\" y=\"" << fmt(y0 + 16)
      << "\" font-size=\"12\">ECE " << fmt(bins.total ? bins.ece() : 0.0) << "</text>\n";
  out << "  </g>\n";
}

}  // namespace

std::string reliability_svg(const ReliabilityBins& pre, const ReliabilityBins& post) {
  const double width = 2 * kPanel + 2 * kMargin + kGap;
  const double height = kPanel + 2 * kMargin + 20;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
      << fmt(height) << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height)
      << "\" font-family=\"sans-serif\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  panel(out, pre, kMargin, "before attack");
  panel(out, post, kMargin + kPanel + kGap, "after attack");
  out << "</svg>\n";
  return out.str();
}

void emit_reliability_svg(const ReliabilityBins& pre, const ReliabilityBins& post,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << reliability_svg(pre, post);
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::string bins_to_json(const ReliabilityBins& pre, const ReliabilityBins& post) {
  auto encode = [](const ReliabilityBins& b) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& bin : b.bins) {
      arr.push_back({{"lower", bin.lower},
                     {"upper", bin.upper},
                     {"count", bin.count},
                     {"mean_confidence", bin.mean_confidence},
                     {"accuracy", bin.accuracy}});
    }
    return nlohmann::json{{"total", b.total}, {"bins", arr}};
  };
  return nlohmann::json{{"pre", encode(pre)}, {"post", encode(post)}}.dump(2) + "\n";
}

}  // namespace calattack
