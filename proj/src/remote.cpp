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


#include "calattack/harness.hpp"
#include "httplib.h"
#include "json.hpp"

namespace calattack {

using nlohmann::json;

struct RemoteOracle::Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("remote url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/predict"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

RemoteOracle::RemoteOracle(RemoteSettings settings, int input_dim, int num_classes, Logger log)
    : settings_(std::move(settings)),
      input_dim_(input_dim),
      num_classes_(num_classes),
      log_(std::move(log)),
      endpoint_(std::make_unique<Endpoint>()) {
  if (settings_.timeout_ms < 1) throw std::invalid_argument("remote timeout must be positive");
  if (settings_.max_retries < 0) throw std::invalid_argument("remote max_retries must be >= 0");
  auto [base, path] = split_url(settings_.url);
  endpoint_->base = std::move(base);
  endpoint_->path = std::move(path);
}

RemoteOracle::~RemoteOracle() = default;

ProbVector RemoteOracle::do_predict(std::span<const double> features) const {
  require_same_dim(features.size(), static_cast<std::size_t>(input_dim_), "remote predict");
  const std::string body = json{{"features", std::vector<double>(features.begin(), features.end())}}.dump();

  httplib::Client client(endpoint_->base);
  const auto sec = settings_.timeout_ms / 1000;
  const auto usec = (settings_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  std::string last_error;
  for (int attempt = 0; attempt <= settings_.max_retries; ++attempt) {
    if (attempt > 0) {
      retries_.fetch_add(1);
      if (log_) log_("remote retry " + std::to_string(attempt) + " after: " + last_error);
    }
    auto res = client.Post(endpoint_->path, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw std::runtime_error("remote oracle returned HTTP " + std::to_string(res->status));
    }
    json reply;
    try {
      reply = json::parse(res->body);
      auto probs = reply.at("probs").get<std::vector<double>>();
      if (num_classes_ > 0 && static_cast<int>(probs.size()) != num_classes_) {
        throw std::runtime_error("expected " + std::to_string(num_classes_) + " probabilities, got " +
                                 std::to_string(probs.size()));
      }
      return ProbVector(std::move(probs));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("malformed remote response: ") + e.what());
    }
  }
  throw OracleUnavailable("remote oracle unavailable after " +
                          std::to_string(settings_.max_retries + 1) + " attempts: " + last_error);
}

void register_predict_endpoint(httplib::Server& server, const ClassifierOracle& oracle) {
  server.Post("/predict", [&oracle](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto features = json::parse(req.body).at("features").get<std::vector<double>>();
      const ProbVector probs = oracle.predict(features);
      const std::vector<double> out(probs.values().begin(), probs.values().end());
      res.set_content(json{{"probs", out}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

}  // namespace calattack
