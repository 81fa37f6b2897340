// Copyright 2026 The curvedetect Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CURVEDETECT_MODELCLIENT_H_
#define CURVEDETECT_MODELCLIENT_H_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "curvedetect/backend.h"
#include "curvedetect/perturb.h"
#include "json.hpp"

namespace curvedetect {

enum class ScoreRoute { kEcho, kNative };

struct EndpointConfig {
  std::string alias;  // names the endpoint in manifests and the API-key env var
  std::string base_url;
  std::string model_name;
  std::optional<std::string> api_key;  // never serialized or hashed
  int timeout_ms = 60000;
  int max_retries = 3;
  double rate_limit = 0.0;  // requests per second; 0 = unlimited
  int backoff_ms = 500;     // first retry delay, doubled per retry
  ScoreRoute score_route = ScoreRoute::kEcho;
  // Base of the logprobs the server reports (e, 10 or 2); converted to
  // natural log at the client boundary.
  double logprob_base = 0.0;  // 0 means e
  bool can_score = true;      // false for generate-only endpoints

  void Validate() const;
  // base_url + model; identifies the endpoint in cache keys.
  std::string identity() const;
  nlohmann::json ToJson() const;
  // Reads the API key from CURVEDETECT_API_KEY_<ALIAS> when present.
  static EndpointConfig FromJson(const nlohmann::json& j);
};

std::string ApiKeyEnvVar(std::string_view alias);

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
  int timeout_ms = 60000;
};

struct HttpResponse {
  int status = 0;  // 0: transport failure, see error
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse Post(const HttpRequest& request) = 0;
  // True when no request may leave the process.
  virtual bool offline() const { return false; }
};

// cpp-httplib backed transport (http and https).
class HttpTransport : public Transport {
 public:
  HttpResponse Post(const HttpRequest& request) override;
};

// Refuses every request; installed by --offline so cache misses fail loudly.
class OfflineTransport : public Transport {
 public:
  HttpResponse Post(const HttpRequest& request) override;
  bool offline() const override { return true; }
};

// Directory of content-addressed response files (<dir>/<k[0:2]>/<k>.json).
// Writes are atomic; an unreadable or mismatched entry is a miss and is
// overwritten by the next Put.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string Key(std::string_view endpoint_identity, std::string_view kind,
                         const nlohmann::json& body);
  std::optional<std::string> Get(const std::string& key) const;
  void Put(const std::string& key, std::string_view kind, std::string_view response);
  std::filesystem::path PathFor(const std::string& key) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// Token bucket with a burst of one: dispatches are spaced >= 1/rate apart.
class RateLimiter {
 public:
  explicit RateLimiter(double rate_per_second);
  // Blocks until the next dispatch slot and returns it.
  std::chrono::steady_clock::time_point Acquire();
  // Shared limiter per endpoint identity.
  static std::shared_ptr<RateLimiter> ForEndpoint(const std::string& identity,
                                                  double rate_per_second);

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_{};
  std::chrono::steady_clock::time_point next_{};
};

struct ClientStats {
  std::atomic<int64_t> requests{0};       // logical requests
  std::atomic<int64_t> cache_hits{0};
  std::atomic<int64_t> network_calls{0};  // transport Post calls
  std::atomic<int64_t> retries{0};
};

// Wire parsing, usable without a client (golden fixtures replay these).
std::string ParseCompletion(const nlohmann::json& response);
// choices[0].logprobs; a leading null (first token has no context) is skipped.
ScoreReport ParseEchoLogprobs(const nlohmann::json& response, double logprob_base = 0.0);
ScoreReport ParseNativeLogprobs(const nlohmann::json& response, double logprob_base = 0.0);
// Fill j is the text between <extra_id_j> and the next marker (or end),
// trimmed with internal whitespace collapsed. Throws kProtocol if a marker
// below n is missing.
std::vector<std::string> ParseSentinelFills(std::string_view output, size_t n);

// Client for one endpoint. Safe for concurrent use.
class ModelClient {
 public:
  ModelClient(EndpointConfig config, std::shared_ptr<Transport> transport,
              std::shared_ptr<ResponseCache> cache = nullptr);

  // Completion text without the prompt.
  std::string Complete(const std::string& prompt, const GenerationParams& params);
  ScoreReport ScoreRemote(std::string_view text);
  std::vector<std::string> FillMaskRemote(std::string_view masked_text, size_t n_sentinels,
                                          std::optional<uint64_t> seed = std::nullopt);

  const EndpointConfig& config() const { return config_; }
  const ClientStats& stats() const { return stats_; }

 private:
  using Validator = std::function<void(const nlohmann::json&)>;
  nlohmann::json Request(std::string_view kind, const std::string& path,
                         const nlohmann::json& body, const Validator& validate);

  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  std::shared_ptr<RateLimiter> limiter_;
  ClientStats stats_;
};

class RemoteGenerator : public GenerationBackend {
 public:
  explicit RemoteGenerator(std::shared_ptr<ModelClient> client) : client_(std::move(client)) {}
  std::string identity() const override { return client_->config().identity(); }
  std::string Generate(const std::string& prompt,
                       const GenerationParams& params) const override {
    return client_->Complete(prompt, params);
  }

 private:
  std::shared_ptr<ModelClient> client_;
};

class RemoteScorer : public ScorerBackend {
 public:
  explicit RemoteScorer(std::shared_ptr<ModelClient> client) : client_(std::move(client)) {}
  std::string identity() const override { return client_->config().identity(); }
  ScoreReport Score(std::string_view text, bool keep_per_token) const override;

 private:
  std::shared_ptr<ModelClient> client_;
};

// T5-style sentinel filling through the native /fill route.
class RemoteFiller : public FillBackend {
 public:
  explicit RemoteFiller(std::shared_ptr<ModelClient> client) : client_(std::move(client)) {}
  std::string identity() const override { return "fill:" + client_->config().identity(); }
  std::vector<std::string> Fill(const FillRequest& request, Rng& rng) const override;

 private:
  std::shared_ptr<ModelClient> client_;
};

}  // namespace curvedetect

#endif  // CURVEDETECT_MODELCLIENT_H_
