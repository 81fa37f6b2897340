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

#include "curvedetect/modelclient.h"

#include <spdlog/spdlog.h>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <map>
#include <thread>

#include "curvedetect/util.h"
#include "httplib.h"

namespace curvedetect {

using nlohmann::json;

// ---- GenerationParams (shared contract, validated here) ----

void GenerationParams::Validate() const {
  if (max_tokens < 0 || min_tokens < 0) {
    throw Error(ErrorKind::kValidation, "token limits must be >= 0");
  }
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kValidation, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorKind::kValidation, "top_p must be in (0, 1]");
  }
}

json GenerationParams::ToJson() const {
  json j = {{"max_tokens", max_tokens},
            {"min_tokens", min_tokens},
            {"temperature", temperature},
            {"top_p", top_p},
            {"stop", stop}};
  if (seed) j["seed"] = *seed;
  return j;
}

GenerationParams GenerationParams::FromJson(const json& j) {
  GenerationParams p;
  p.max_tokens = j.value("max_tokens", p.max_tokens);
  p.min_tokens = j.value("min_tokens", p.min_tokens);
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.stop = j.value("stop", p.stop);
  if (j.contains("seed") && !j["seed"].is_null()) p.seed = j["seed"].get<int64_t>();
  p.Validate();
  return p;
}

// ---- endpoint ----

std::string ApiKeyEnvVar(std::string_view alias) {
  std::string var = "CURVEDETECT_API_KEY_";
  for (char c : alias) {
    var.push_back(std::isalnum(static_cast<unsigned char>(c))
                      ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                      : '_');
  }
  return var;
}

void EndpointConfig::Validate() const {
  if (base_url.empty()) throw Error(ErrorKind::kValidation, "endpoint " + alias + ": empty base_url");
  if (timeout_ms <= 0) throw Error(ErrorKind::kValidation, "endpoint " + alias + ": timeout_ms must be > 0");
  if (max_retries < 0) throw Error(ErrorKind::kValidation, "endpoint " + alias + ": max_retries must be >= 0");
  if (rate_limit < 0) throw Error(ErrorKind::kValidation, "endpoint " + alias + ": rate_limit must be >= 0");
  if (!(logprob_base == 0.0 || logprob_base > 1.0)) {
    throw Error(ErrorKind::kValidation, "endpoint " + alias + ": logprob_base must be e, 10 or 2");
  }
}

std::string EndpointConfig::identity() const {
  std::string url = base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  return url + "#" + model_name;
}

json EndpointConfig::ToJson() const {
  return {{"alias", alias},
          {"base_url", base_url},
          {"model", model_name},
          {"timeout_ms", timeout_ms},
          {"max_retries", max_retries},
          {"rate_limit", rate_limit},
          {"backoff_ms", backoff_ms},
          {"score_route", score_route == ScoreRoute::kEcho ? "echo" : "native"},
          {"logprob_base", logprob_base == 0.0 ? json("e") : json(logprob_base)},
          {"can_score", can_score}};
}

EndpointConfig EndpointConfig::FromJson(const json& j) {
  EndpointConfig c;
  c.alias = j.value("alias", "");
  c.base_url = j.at("base_url").get<std::string>();
  c.model_name = j.value("model", "");
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.rate_limit = j.value("rate_limit", c.rate_limit);
  c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
  const std::string route = j.value("score_route", "echo");
  if (route == "echo") {
    c.score_route = ScoreRoute::kEcho;
  } else if (route == "native") {
    c.score_route = ScoreRoute::kNative;
  } else {
    throw Error(ErrorKind::kValidation, "score_route must be echo or native");
  }
  if (j.contains("logprob_base")) {
    const auto& b = j["logprob_base"];
    c.logprob_base = b.is_string() && b.get<std::string>() == "e" ? 0.0 : b.get<double>();
  }
  c.can_score = j.value("can_score", true);
  if (const char* key = std::getenv(ApiKeyEnvVar(c.alias).c_str()); key && *key) {
    c.api_key = key;
  }
  c.Validate();
  return c;
}

// ---- transports ----

HttpResponse HttpTransport::Post(const HttpRequest& request) {
  std::string url = request.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  const auto path_start =
      url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);

  HttpResponse out;
  try {
    httplib::Client client(origin);
    const auto timeout = std::chrono::milliseconds(request.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto res = client.Post(prefix + request.path, headers, request.body, "application/json");
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

HttpResponse OfflineTransport::Post(const HttpRequest& request) {
  throw Error(ErrorKind::kOffline,
              "offline mode: refusing network request to " + request.base_url + request.path);
}

// ---- cache ----

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string ResponseCache::Key(std::string_view endpoint_identity, std::string_view kind,
                               const json& body) {
  // json objects are key-sorted, so dump() is canonical for our bodies.
  json keyed = {{"endpoint", endpoint_identity}, {"kind", kind}, {"body", body}};
  return Sha256Hex(keyed.dump());
}

std::filesystem::path ResponseCache::PathFor(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> ResponseCache::Get(const std::string& key) const {
  const auto path = PathFor(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    json entry = json::parse(ReadFile(path));
    if (entry.at("key").get<std::string>() != key) {
      spdlog::warn("cache entry {} has a mismatched key; ignoring", path.string());
      return std::nullopt;
    }
    return entry.at("response").get<std::string>();
  } catch (const std::exception& e) {
    spdlog::warn("corrupt cache entry {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void ResponseCache::Put(const std::string& key, std::string_view kind,
                        std::string_view response) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  json entry = {{"key", key}, {"kind", kind}, {"created_at", stamp}, {"response", response}};
  WriteFileAtomic(PathFor(key), entry.dump());
}

// ---- rate limiting ----

RateLimiter::RateLimiter(double rate_per_second) {
  if (rate_per_second > 0) {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / rate_per_second));
  }
}

std::chrono::steady_clock::time_point RateLimiter::Acquire() {
  auto now = std::chrono::steady_clock::now();
  if (interval_.count() == 0) return now;
  std::lock_guard lock(mu_);
  now = std::chrono::steady_clock::now();
  if (now < next_) {
    std::this_thread::sleep_until(next_);
    now = next_;
  }
  next_ = now + interval_;
  return now;
}

std::shared_ptr<RateLimiter> RateLimiter::ForEndpoint(const std::string& identity,
                                                      double rate_per_second) {
  static std::mutex mu;
  static std::map<std::pair<std::string, double>, std::shared_ptr<RateLimiter>> registry;
  std::lock_guard lock(mu);
  auto& slot = registry[{identity, rate_per_second}];
  if (!slot) slot = std::make_shared<RateLimiter>(rate_per_second);
  return slot;
}

// ---- wire parsing ----

namespace {

double ToNatural(double value, double base) {
  return base == 0.0 ? value : value * std::log(base);
}

ScoreReport ReportFromLogprobs(const json& logprobs, const json* tokens, double base) {
  if (!logprobs.is_array()) {
    throw Error(ErrorKind::kCapability, "backend returned no token logprobs");
  }
  if (tokens && tokens->is_array() && tokens->size() != logprobs.size()) {
    throw Error(ErrorKind::kProtocol,
                "token/logprob length mismatch (" + std::to_string(tokens->size()) + " vs " +
                    std::to_string(logprobs.size()) + ")");
  }
  ScoreReport r;
  const bool keep = tokens && tokens->is_array();
  if (keep) r.per_token.emplace();
  for (size_t i = 0; i < logprobs.size(); ++i) {
    if (logprobs[i].is_null()) {
      if (i == 0) continue;
      throw Error(ErrorKind::kProtocol, "null logprob at position " + std::to_string(i));
    }
    const double lp = ToNatural(logprobs[i].get<double>(), base);
    r.total_logprob += lp;
    r.token_count += 1;
    if (keep) r.per_token->emplace_back((*tokens)[i].get<std::string>(), lp);
  }
  if (r.token_count == 0) throw Error(ErrorKind::kProtocol, "no scored tokens in response");
  return r;
}

std::string CollapseWhitespace(std::string_view s) { return NormalizeWhitespace(s); }

}  // namespace

std::string ParseCompletion(const json& response) {
  if (!response.contains("choices") || !response["choices"].is_array() ||
      response["choices"].empty() || !response["choices"][0].contains("text") ||
      !response["choices"][0]["text"].is_string()) {
    throw Error(ErrorKind::kProtocol, "completion response lacks choices[0].text");
  }
  std::string text = response["choices"][0]["text"].get<std::string>();
  if (NormalizeWhitespace(text).empty()) {
    throw Error(ErrorKind::kProtocol, "empty completion");
  }
  return text;
}

ScoreReport ParseEchoLogprobs(const json& response, double logprob_base) {
  if (!response.contains("choices") || !response["choices"].is_array() ||
      response["choices"].empty()) {
    throw Error(ErrorKind::kProtocol, "echo response lacks choices");
  }
  const auto& choice = response["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null() ||
      !choice["logprobs"].contains("token_logprobs")) {
    throw Error(ErrorKind::kCapability, "backend does not return echoed logprobs");
  }
  const auto& lp = choice["logprobs"];
  const json* tokens = lp.contains("tokens") ? &lp["tokens"] : nullptr;
  return ReportFromLogprobs(lp["token_logprobs"], tokens, logprob_base);
}

ScoreReport ParseNativeLogprobs(const json& response, double logprob_base) {
  if (!response.contains("token_logprobs")) {
    throw Error(ErrorKind::kCapability, "score response lacks token_logprobs");
  }
  const json* tokens = response.contains("tokens") ? &response["tokens"] : nullptr;
  return ReportFromLogprobs(response["token_logprobs"], tokens, logprob_base);
}

std::vector<std::string> ParseSentinelFills(std::string_view output, size_t n) {
  std::string text(output);
  for (const char* junk : {"<pad>", "</s>"}) {
    for (size_t p = text.find(junk); p != std::string::npos; p = text.find(junk)) {
      text.replace(p, std::strlen(junk), " ");
    }
  }
  std::vector<std::string> fills;
  for (size_t j = 0; j < n; ++j) {
    const std::string marker = SentinelToken(j);
    const size_t at = text.find(marker);
    if (at == std::string::npos) {
      throw Error(ErrorKind::kProtocol, "fill response is missing " + marker);
    }
    const size_t begin = at + marker.size();
    size_t end = text.find("<extra_id_", begin);
    if (end == std::string::npos) end = text.size();
    fills.push_back(CollapseWhitespace(std::string_view(text).substr(begin, end - begin)));
  }
  return fills;
}

// ---- client ----

ModelClient::ModelClient(EndpointConfig config, std::shared_ptr<Transport> transport,
                         std::shared_ptr<ResponseCache> cache)
    : config_(std::move(config)), transport_(std::move(transport)), cache_(std::move(cache)) {
  config_.Validate();
  limiter_ = RateLimiter::ForEndpoint(config_.identity(), config_.rate_limit);
}

json ModelClient::Request(std::string_view kind, const std::string& path, const json& body,
                          const Validator& validate) {
  stats_.requests.fetch_add(1);
  const std::string key = ResponseCache::Key(config_.identity(), kind, body);
  if (cache_) {
    if (auto hit = cache_->Get(key)) {
      try {
        json parsed = json::parse(*hit);
        validate(parsed);
        stats_.cache_hits.fetch_add(1);
        return parsed;
      } catch (const std::exception& e) {
        spdlog::warn("ignoring invalid cached {} response: {}", kind, e.what());
      }
    }
  }

  if (transport_->offline()) {
    throw Error(ErrorKind::kOffline, config_.alias + " " + std::string(kind) +
                                         ": no cached response and --offline is set");
  }

  HttpRequest req;
  req.base_url = config_.base_url;
  req.path = path;
  req.body = body.dump();
  req.timeout_ms = config_.timeout_ms;
  req.headers.emplace_back("Content-Type", "application/json");
  if (config_.api_key) req.headers.emplace_back("Authorization", "Bearer " + *config_.api_key);

  std::string last_error;
  ErrorKind last_kind = ErrorKind::kBackend;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      stats_.retries.fetch_add(1);
      const auto delay = std::chrono::milliseconds(
          static_cast<int64_t>(config_.backoff_ms) << std::min(attempt - 1, 16));
      spdlog::info("{} {}: attempt {} after {} ({} ms backoff)", config_.alias, kind,
                   attempt + 1, last_error, delay.count());
      std::this_thread::sleep_for(delay);
    }
    limiter_->Acquire();
    stats_.network_calls.fetch_add(1);
    HttpResponse res = transport_->Post(req);
    if (res.status == 0) {
      last_error = "transport error: " + res.error;
      last_kind = ErrorKind::kBackend;
      continue;
    }
    if (res.status == 429 || res.status >= 500) {
      last_error = "HTTP " + std::to_string(res.status);
      last_kind = ErrorKind::kBackend;
      continue;
    }
    if (res.status != 200) {
      throw Error(ErrorKind::kBackend, config_.alias + " " + std::string(kind) + ": HTTP " +
                                           std::to_string(res.status) + ": " +
                                           res.body.substr(0, 200));
    }
    json parsed;
    try {
      parsed = json::parse(res.body);
      validate(parsed);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kCapability) throw;
      last_error = e.what();
      last_kind = e.kind();
      continue;
    } catch (const json::exception& e) {
      last_error = std::string("malformed response JSON: ") + e.what();
      last_kind = ErrorKind::kProtocol;
      continue;
    }
    if (cache_) cache_->Put(key, kind, res.body);
    return parsed;
  }
  throw Error(last_kind, config_.alias + " " + std::string(kind) + " failed after " +
                             std::to_string(config_.max_retries + 1) +
                             " attempts: " + last_error);
}

std::string ModelClient::Complete(const std::string& prompt, const GenerationParams& params) {
  params.Validate();
  json body = {{"model", config_.model_name},
               {"prompt", prompt},
               {"max_tokens", params.max_tokens},
               {"temperature", params.temperature},
               {"top_p", params.top_p}};
  if (!params.stop.empty()) body["stop"] = params.stop;
  if (params.seed) body["seed"] = *params.seed;
  if (params.min_tokens > 0) body["min_tokens"] = params.min_tokens;
  return ParseCompletion(Request("complete", "/v1/completions", body,
                                 [](const json& r) { ParseCompletion(r); }));
}

ScoreReport ModelClient::ScoreRemote(std::string_view text) {
  if (!config_.can_score) {
    throw Error(ErrorKind::kCapability,
                "endpoint " + config_.alias + " is generate-only and cannot score");
  }
  if (NormalizeWhitespace(text).empty()) {
    throw Error(ErrorKind::kValidation, "cannot score empty text");
  }
  const double base = config_.logprob_base;
  if (config_.score_route == ScoreRoute::kNative) {
    json body = {{"model", config_.model_name}, {"text", text}};
    return ParseNativeLogprobs(
        Request("score", "/score", body, [base](const json& r) { ParseNativeLogprobs(r, base); }),
        base);
  }
  json body = {{"model", config_.model_name}, {"prompt", text}, {"max_tokens", 0},
               {"echo", true},   {"logprobs", 0},  {"temperature", 0}};
  return ParseEchoLogprobs(
      Request("score", "/v1/completions", body,
              [base](const json& r) { ParseEchoLogprobs(r, base); }),
      base);
}

std::vector<std::string> ModelClient::FillMaskRemote(std::string_view masked_text,
                                                     size_t n_sentinels,
                                                     std::optional<uint64_t> seed) {
  if (n_sentinels == 0) {
    throw Error(ErrorKind::kValidation, "fill request needs at least one sentinel");
  }
  if (CountSentinels(masked_text) != n_sentinels) {
    throw Error(ErrorKind::kValidation, "masked text does not contain exactly " +
                                            std::to_string(n_sentinels) + " sentinels");
  }
  json body = {{"model", config_.model_name}, {"text", masked_text}, {"n_sentinels", n_sentinels}};
  if (seed) body["seed"] = *seed;
  auto check = [n_sentinels](const json& r) {
    if (!r.contains("text") || !r["text"].is_string()) {
      throw Error(ErrorKind::kProtocol, "fill response lacks \"text\"");
    }
    ParseSentinelFills(r["text"].get<std::string>(), n_sentinels);
  };
  json r = Request("fill", "/fill", body, check);
  return ParseSentinelFills(r["text"].get<std::string>(), n_sentinels);
}

ScoreReport RemoteScorer::Score(std::string_view text, bool keep_per_token) const {
  ScoreReport r = client_->ScoreRemote(text);
  if (!keep_per_token) r.per_token.reset();
  return r;
}

std::vector<std::string> RemoteFiller::Fill(const FillRequest& request, Rng& rng) const {
  // The seed keeps neighbors of one text distinct in the cache and lets
  // seeded servers vary their fills.
  const uint64_t seed = rng.Next() >> 1;
  return client_->FillMaskRemote(request.masked_text, request.plan.spans.size(), seed);
}

}  // namespace curvedetect
