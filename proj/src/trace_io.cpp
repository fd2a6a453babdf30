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

// Line-delimited JSON trace log: one object per attacked sample.

#include <istream>
#include <ostream>
#include <string>

#include "calattack/attacks.hpp"
#include "json.hpp"

namespace calattack {

using nlohmann::json;

void write_trace_line(std::ostream& out, const AttackTrace& t) {
  json j;
  j["index"] = t.sample_index;
  j["kind"] = std::string(to_string(t.kind));
  if (!t.ok()) {
    j["true_label"] = t.true_label;
    j["error"] = t.error;
    out << j.dump() << '\n';
    return;
  }
  j["direction"] = std::string(to_string(t.direction));
  j["g"] = t.rca_target ? json(*t.rca_target) : json(nullptr);
  j["true_label"] = t.true_label;
  j["pre_label"] = t.pre_label;
  j["post_label"] = t.post_label;
  j["pre_conf"] = t.pre_confidence;
  j["post_conf"] = t.post_confidence;
  j["queries"] = t.queries_used;
  j["accepted"] = t.accepted_updates;
  j["norm"] = std::string(to_string(t.norm));
  j["delta_norm"] = t.perturbation_norm;
  out << j.dump() << '\n';
}

void write_traces(std::ostream& out, std::span<const AttackTrace> traces) {
  for (const auto& t : traces) write_trace_line(out, t);
}

std::vector<AttackTrace> read_traces(std::istream& in) {
  std::vector<AttackTrace> traces;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      AttackTrace t;
      t.sample_index = j.at("index").get<std::size_t>();
      t.kind = parse_attack_kind(j.at("kind").get<std::string>());
      t.true_label = j.at("true_label").get<int>();
      if (j.contains("error")) {
        t.error = j.at("error").get<std::string>();
        traces.push_back(std::move(t));
        continue;
      }
      t.direction = parse_direction(j.at("direction").get<std::string>());
      if (!j.at("g").is_null()) t.rca_target = j.at("g").get<double>();
      t.pre_label = j.at("pre_label").get<int>();
      t.post_label = j.at("post_label").get<int>();
      t.pre_confidence = j.at("pre_conf").get<double>();
      t.post_confidence = j.at("post_conf").get<double>();
      t.queries_used = j.at("queries").get<std::uint64_t>();
      t.accepted_updates = j.at("accepted").get<int>();
      t.norm = parse_norm(j.at("norm").get<std::string>());
      t.perturbation_norm = j.at("delta_norm").get<double>();
      traces.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traces;
}

}  // namespace calattack
