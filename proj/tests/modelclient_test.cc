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

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "curvedetect/util.h"
#include "test_support.h"

namespace curvedetect {
namespace {

using nlohmann::json;

// Local HTTP server answering from a scripted handler.
class MockServer {
 public:
  using Handler = std::function<std::pair<int, std::string>(const std::string&, const json&)>;

  explicit MockServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mu_);
        paths.push_back(req.path);
        bodies.push_back(json::parse(req.body));
        authorization.push_back(req.get_header_value("Authorization"));
      }
      hits++;
      auto [status, body] = handler_(req.path, json::parse(req.body));
      res.status = status;
      res.set_content(body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> hits{0};
  std::vector<std::string> paths;
  std::vector<json> bodies;
  std::vector<std::string> authorization;

 private:
  Handler handler_;
  httplib::Server server_;
  std::thread thread_;
  std::mutex mu_;
  int port_ = 0;
};

std::string CompletionBody(const std::string& text) {
  return json{{"choices", {{{"text", text}, {"index", 0}}}}}.dump();
}

EndpointConfig Config(const std::string& url, const std::string& alias = "mock") {
  EndpointConfig c;
  c.alias = alias;
  c.base_url = url;
  c.model_name = "m";
  c.backoff_ms = 10;
  c.max_retries = 3;
  c.timeout_ms = 5000;
  return c;
}

// In-process transport replaying canned responses and recording call times.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::string body) : body_(std::move(body)) {}
  HttpResponse Post(const HttpRequest& request) override {
    std::lock_guard lock(mu_);
    times.push_back(std::chrono::steady_clock::now());
    requests.push_back(request);
    return {200, body_, ""};
  }
  std::vector<std::chrono::steady_clock::time_point> times;
  std::vector<HttpRequest> requests;

 private:
  std::string body_;
  std::mutex mu_;
};

json LoadFixture(const std::string& name) {
  return json::parse(ReadFile(testing::SourceDir() / "tests/fixtures" / name));
}

TEST(ModelClientTest, CompletionAndCacheHit) {
  MockServer server([](const std::string& path, const json& body) {
    EXPECT_EQ(path, "/v1/completions");
    EXPECT_EQ(body["prompt"], "Once upon");
    return std::make_pair(200, CompletionBody("hello world"));
  });
  testing::TempDir dir("cache");
  auto cache = std::make_shared<ResponseCache>(dir.path());
  ModelClient client(Config(server.url()), std::make_shared<HttpTransport>(), cache);
  GenerationParams p;
  p.max_tokens = 5;
  p.seed = 3;
  EXPECT_EQ(client.Complete("Once upon", p), "hello world");
  EXPECT_EQ(client.Complete("Once upon", p), "hello world");
  EXPECT_EQ(server.hits.load(), 1);
  EXPECT_EQ(client.stats().network_calls.load(), 1);
  EXPECT_EQ(client.stats().cache_hits.load(), 1);
  EXPECT_EQ(server.bodies[0]["max_tokens"], 5);
  EXPECT_EQ(server.bodies[0]["seed"], 3);
  EXPECT_EQ(server.bodies[0]["model"], "m");
  EXPECT_FALSE(server.bodies[0].contains("min_tokens"));
  // Different parameters are a different request.
  p.temperature = 0.5;
  client.Complete("Once upon", p);
  EXPECT_EQ(server.hits.load(), 2);
}

TEST(ModelClientTest, RetriesTooManyRequestsWithBackoff) {
  std::atomic<int> n{0};
  MockServer server([&](const std::string&, const json&) {
    return ++n <= 2 ? std::make_pair(429, std::string("{}"))
                    : std::make_pair(200, CompletionBody("ok"));
  });
  ModelClient client(Config(server.url()), std::make_shared<HttpTransport>());
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(client.Complete("p", GenerationParams{}), "ok");
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(server.hits.load(), 3);
  EXPECT_EQ(client.stats().retries.load(), 2);
  EXPECT_GE(elapsed, std::chrono::milliseconds(30));  // 10 ms then 20 ms
}

TEST(ModelClientTest, PermanentAndExhaustedFailures) {
  MockServer bad_request([](const std::string&, const json&) {
    return std::make_pair(400, std::string("{\"error\":\"bad\"}"));
  });
  ModelClient a(Config(bad_request.url()), std::make_shared<HttpTransport>());
  try {
    a.Complete("p", GenerationParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBackend);
  }
  EXPECT_EQ(bad_request.hits.load(), 1);

  MockServer down([](const std::string&, const json&) {
    return std::make_pair(503, std::string("{}"));
  });
  auto cfg = Config(down.url());
  cfg.max_retries = 2;
  ModelClient b(cfg, std::make_shared<HttpTransport>());
  EXPECT_THROW(b.Complete("p", GenerationParams{}), Error);
  EXPECT_EQ(down.hits.load(), 3);

  MockServer empty([](const std::string&, const json&) {
    return std::make_pair(200, CompletionBody(""));
  });
  ModelClient c(Config(empty.url()), std::make_shared<HttpTransport>());
  try {
    c.Complete("p", GenerationParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }

  ModelClient unreachable(Config("http://127.0.0.1:1"), std::make_shared<HttpTransport>());
  EXPECT_THROW(unreachable.Complete("p", GenerationParams{}), Error);
}

TEST(ModelClientTest, NativeScoreRoute) {
  MockServer server([](const std::string& path, const json& body) {
    EXPECT_EQ(path, "/score");
    EXPECT_EQ(body["text"], "a b c");
    return std::make_pair(200, std::string(R"({"token_logprobs":[-1.0,-2.0,-3.0]})"));
  });
  auto cfg = Config(server.url());
  cfg.score_route = ScoreRoute::kNative;
  ModelClient client(cfg, std::make_shared<HttpTransport>());
  ScoreReport r = client.ScoreRemote("a b c");
  EXPECT_EQ(r.total_logprob, -6.0);
  EXPECT_EQ(r.token_count, 3);
}

TEST(ModelClientTest, EchoScoreSkipsLeadingNull) {
  MockServer server([](const std::string& path, const json& body) {
    EXPECT_EQ(path, "/v1/completions");
    EXPECT_EQ(body["echo"], true);
    EXPECT_EQ(body["max_tokens"], 0);
    json lp = {{"tokens", {"x", "y", "z"}}, {"token_logprobs", {nullptr, -1.5, -2.5}}};
    return std::make_pair(200, json{{"choices", {{{"text", "x y z"}, {"logprobs", lp}}}}}.dump());
  });
  testing::TempDir dir("cache");
  auto cache = std::make_shared<ResponseCache>(dir.path());
  ModelClient client(Config(server.url()), std::make_shared<HttpTransport>(), cache);
  ScoreReport r = client.ScoreRemote("x y z");
  EXPECT_EQ(r.total_logprob, -4.0);
  EXPECT_EQ(r.token_count, 2);
  // Replayed offline from the cache.
  ModelClient offline(Config(server.url()), std::make_shared<OfflineTransport>(), cache);
  EXPECT_EQ(offline.ScoreRemote("x y z"), r);
  EXPECT_EQ(offline.stats().network_calls.load(), 0);
  EXPECT_EQ(server.hits.load(), 1);
}

TEST(ModelClientTest, ScoringCapabilityErrors) {
  MockServer server([](const std::string&, const json&) {
    return std::make_pair(200, CompletionBody("no logprobs here"));
  });
  ModelClient client(Config(server.url()), std::make_shared<HttpTransport>());
  try {
    client.ScoreRemote("text");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapability);
  }
  EXPECT_EQ(server.hits.load(), 1);
  auto cfg = Config(server.url());
  cfg.can_score = false;
  ModelClient gen_only(cfg, std::make_shared<HttpTransport>());
  EXPECT_THROW(gen_only.ScoreRemote("text"), Error);
  EXPECT_EQ(server.hits.load(), 1);
}

TEST(ModelClientTest, MismatchedLogprobsAreProtocolErrors) {
  json r = {{"choices",
             {{{"logprobs", {{"tokens", {"a", "b"}}, {"token_logprobs", {-1.0}}}}}}}};
  try {
    ParseEchoLogprobs(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  json mid_null = {{"choices",
                    {{{"logprobs", {{"token_logprobs", {nullptr, -1.0, nullptr}}}}}}}};
  EXPECT_THROW(ParseEchoLogprobs(mid_null), Error);
  EXPECT_THROW(ParseNativeLogprobs(json{{"token_logprobs", json::array()}}), Error);
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(ParseNativeLogprobs(json{{"token_logprobs", {-1.0, -3.0}}}, 2).total_logprob,
              -4.0 * ln2, 1e-15);
}

TEST(ModelClientTest, FillMaskRemote) {
  MockServer server([](const std::string& path, const json& body) {
    EXPECT_EQ(path, "/fill");
    EXPECT_EQ(body["n_sentinels"], 2);
    return std::make_pair(
        200, json{{"text", "<extra_id_0> red fox <extra_id_1> lazy dog <extra_id_2>"}}.dump());
  });
  ModelClient client(Config(server.url()), std::make_shared<HttpTransport>());
  EXPECT_EQ(client.FillMaskRemote("the <extra_id_0> saw the <extra_id_1>", 2),
            (std::vector<std::string>{"red fox", "lazy dog"}));
  EXPECT_THROW(client.FillMaskRemote("no sentinel", 0), Error);
  EXPECT_THROW(client.FillMaskRemote("one <extra_id_0>", 2), Error);
  EXPECT_EQ(server.hits.load(), 1);
}

TEST(ModelClientTest, MissingFillsAreRetriedThenFail) {
  MockServer server([](const std::string&, const json&) {
    return std::make_pair(200, json{{"text", "<extra_id_0> only one"}}.dump());
  });
  auto cfg = Config(server.url());
  cfg.max_retries = 2;
  ModelClient client(cfg, std::make_shared<HttpTransport>());
  try {
    client.FillMaskRemote("<extra_id_0> and <extra_id_1>", 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  EXPECT_EQ(server.hits.load(), 3);
}

TEST(ModelClientTest, ApiKeyComesFromEnvironmentOnly) {
  MockServer server([](const std::string&, const json&) {
    return std::make_pair(200, CompletionBody("ok"));
  });
  ::setenv("CURVEDETECT_API_KEY_MY_EP_1", "sekrit", 1);
  EndpointConfig cfg = EndpointConfig::FromJson(
      json{{"alias", "my-ep.1"}, {"base_url", server.url()}, {"model", "m"}});
  ::unsetenv("CURVEDETECT_API_KEY_MY_EP_1");
  EXPECT_EQ(ApiKeyEnvVar("my-ep.1"), "CURVEDETECT_API_KEY_MY_EP_1");
  ASSERT_EQ(cfg.api_key, "sekrit");
  EXPECT_EQ(cfg.ToJson().dump().find("sekrit"), std::string::npos);
  EXPECT_EQ(cfg.identity().find("sekrit"), std::string::npos);
  ModelClient client(cfg, std::make_shared<HttpTransport>());
  client.Complete("p", GenerationParams{});
  EXPECT_EQ(server.authorization[0], "Bearer sekrit");
}

TEST(ModelClientTest, EndpointValidation) {
  EXPECT_THROW(EndpointConfig::FromJson(json{{"base_url", "http://x"}, {"timeout_ms", 0}}),
               Error);
  EXPECT_THROW(EndpointConfig::FromJson(json{{"base_url", "http://x"}, {"max_retries", -1}}),
               Error);
  EXPECT_THROW(EndpointConfig::FromJson(json{{"base_url", "http://x"}, {"score_route", "x"}}),
               Error);
  GenerationParams p;
  p.top_p = 0.0;
  EXPECT_THROW(p.Validate(), Error);
  p.top_p = 1.0;
  p.temperature = -1;
  EXPECT_THROW(p.Validate(), Error);
}

TEST(ResponseCacheTest, KeysIgnoreFieldOrder) {
  testing::Gen gen(61);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<std::string, int>> fields;
    for (int i = 0; i < gen.Int(1, 6); ++i) fields.emplace_back("f" + std::to_string(i), gen.Int(0, 9));
    std::string a = "{", b = "{";
    for (size_t i = 0; i < fields.size(); ++i) {
      a += (i ? "," : "") + ("\"" + fields[i].first + "\":" + std::to_string(fields[i].second));
      const auto& r = fields[fields.size() - 1 - i];
      b += (i ? ", " : " ") + ("\"" + r.first + "\" : " + std::to_string(r.second));
    }
    a += "}";
    b += " }";
    EXPECT_EQ(ResponseCache::Key("ep", "complete", json::parse(a)),
              ResponseCache::Key("ep", "complete", json::parse(b)));
  }
  EXPECT_NE(ResponseCache::Key("ep", "complete", json{{"a", 1}}),
            ResponseCache::Key("ep", "score", json{{"a", 1}}));
  EXPECT_NE(ResponseCache::Key("ep", "complete", json{{"a", 1}}),
            ResponseCache::Key("ep2", "complete", json{{"a", 1}}));
  EXPECT_EQ(ResponseCache::Key("ep", "k", json{{"a", 1}}).size(), 64u);
}

TEST(ResponseCacheTest, CorruptEntryIsAMiss) {
  testing::TempDir dir("cache");
  auto cache = std::make_shared<ResponseCache>(dir.path());
  auto transport = std::make_shared<ScriptedTransport>(CompletionBody("fresh"));
  ModelClient client(Config("http://unused"), transport, cache);
  client.Complete("p", GenerationParams{});
  ASSERT_EQ(transport->requests.size(), 1u);
  const std::string key = ResponseCache::Key(client.config().identity(), "complete",
                                             json::parse(transport->requests[0].body));
  const auto path = cache->PathFor(key);
  ASSERT_TRUE(std::filesystem::exists(path));
  EXPECT_EQ(path.parent_path().filename().string(), key.substr(0, 2));
  WriteFileAtomic(path, "{not json");
  EXPECT_FALSE(cache->Get(key).has_value());
  EXPECT_EQ(client.Complete("p", GenerationParams{}), "fresh");
  EXPECT_EQ(transport->requests.size(), 2u);
  EXPECT_TRUE(cache->Get(key).has_value());
}

TEST(ResponseCacheTest, OfflineFailsOnMissAndServesHits) {
  testing::TempDir dir("cache");
  auto cache = std::make_shared<ResponseCache>(dir.path());
  ModelClient warm(Config("http://unused"), std::make_shared<ScriptedTransport>(CompletionBody("x")),
                   cache);
  warm.Complete("cached", GenerationParams{});
  ModelClient offline(Config("http://unused"), std::make_shared<OfflineTransport>(), cache);
  EXPECT_EQ(offline.Complete("cached", GenerationParams{}), "x");
  try {
    offline.Complete("not cached", GenerationParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kOffline);
  }
  EXPECT_EQ(offline.stats().network_calls.load(), 0);
  EXPECT_EQ(offline.stats().retries.load(), 0);
}

TEST(RateLimiterTest, RequestRateNeverExceedsLimit) {
  auto transport = std::make_shared<ScriptedTransport>(CompletionBody("x"));
  auto cfg = Config("http://rate-limited.example", "rl");
  cfg.rate_limit = 40.0;
  auto client = std::make_shared<ModelClient>(cfg, transport);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 4; ++i) client->Complete("p" + std::to_string(t * 10 + i), {});
    });
  }
  for (auto& th : threads) th.join();
  auto times = transport->times;
  ASSERT_EQ(times.size(), 16u);
  std::sort(times.begin(), times.end());
  // Observed arrivals jitter with scheduling; the whole burst cannot.
  const auto interval = std::chrono::microseconds(25000);
  EXPECT_GE(times.back() - times.front(), 15 * interval - std::chrono::milliseconds(10));
}

TEST(RateLimiterTest, SlotsAreSpacedByTheInterval) {
  RateLimiter limiter(40.0);
  std::mutex mu;
  std::vector<std::chrono::steady_clock::time_point> slots;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 5; ++i) {
        const auto slot = limiter.Acquire();
        std::lock_guard lock(mu);
        slots.push_back(slot);
      }
    });
  }
  for (auto& th : threads) th.join();
  ASSERT_EQ(slots.size(), 20u);
  std::sort(slots.begin(), slots.end());
  for (size_t i = 1; i < slots.size(); ++i) {
    EXPECT_GE(slots[i] - slots[i - 1], std::chrono::microseconds(25000));
  }
  // No limit means no waiting.
  RateLimiter unlimited(0.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 1000; ++i) unlimited.Acquire();
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(50));
}

TEST(FixtureTest, GoldenResponsesParse) {
  json c = LoadFixture("completion.json");
  EXPECT_EQ(ParseCompletion(c["response"]), c["expected"]["text"]);
  json e = LoadFixture("echo_logprobs.json");
  ScoreReport r = ParseEchoLogprobs(e["response"]);
  EXPECT_EQ(r.total_logprob, e["expected"]["total_logprob"].get<double>());
  EXPECT_EQ(r.token_count, e["expected"]["token_count"]);
  json n = LoadFixture("native_score_log10.json");
  r = ParseNativeLogprobs(n["response"], n["logprob_base"].get<double>());
  EXPECT_NEAR(r.total_logprob, n["expected"]["total_logprob"].get<double>(), 1e-12);
  json f = LoadFixture("fill_messy.json");
  EXPECT_EQ(ParseSentinelFills(f["response"]["text"].get<std::string>(),
                               f["request"]["n_sentinels"].get<size_t>()),
            f["expected"]["fills"].get<std::vector<std::string>>());
}

}  // namespace
}  // namespace curvedetect
