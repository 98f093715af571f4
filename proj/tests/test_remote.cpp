// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cfrank/error.hpp"
#include "cfrank/scoring.hpp"

using namespace cfrank;

namespace {

// In-process HTTP server bound to an ephemeral loopback port.
struct TestServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

RemoteScorerConfig quick_config(const std::string& url, size_t retries = 0) {
  RemoteScorerConfig config;
  config.base_url = url;
  config.timeout_s = 5.0;
  config.retries = retries;
  return config;
}

}  // namespace

TEST_CASE("remote scorer round-trips scores") {
  TestServer ts;
  nlohmann::json last_body;
  ts.server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = nlohmann::json::parse(req.body);
    nlohmann::json out;
    std::vector<double> scores;
    for (const auto& text : last_body["texts"]) {
      scores.push_back(static_cast<double>(text.get<std::string>().size()));
    }
    out["scores"] = scores;
    res.set_content(out.dump(), "application/json");
  });
  ts.start();

  const RemoteScorer scorer(quick_config(ts.url()));
  const Query q = Query::make("q1", "what is alpha");
  const std::vector<std::vector<std::string>> texts = {{"ab", "cd"}, {"xyz"}};

  const std::vector<double> scores = scorer.score_batch(q, texts);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0] == doctest::Approx(5.0));  // "ab cd"
  CHECK(scores[1] == doctest::Approx(3.0));
  CHECK(last_body["query"] == "what is alpha");
  CHECK(last_body["texts"][0] == "ab cd");

  const std::vector<std::string> single = {"hello"};
  CHECK(scorer.score(q, single) == doctest::Approx(5.0));
  CHECK(scorer.name() == "remote");
}

TEST_CASE("remote scorer resolves registered document ids") {
  TestServer ts;
  ts.server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    const nlohmann::json body = nlohmann::json::parse(req.body);
    nlohmann::json out;
    out["scores"] = std::vector<double>(body["texts"].size(), 7.5);
    res.set_content(out.dump(), "application/json");
  });
  ts.start();

  RemoteScorer scorer(quick_config(ts.url()));
  scorer.register_documents({Document::make("d1", "The CAT sat.")});
  const Query q = Query::make("q1", "cat");
  CHECK(scorer.score_id(q, "d1") == doctest::Approx(7.5));
  CHECK_THROWS_AS(scorer.score_id(q, "dX"), ScorerError);
}

TEST_CASE("non-200 responses carry their status and are not retried when permanent") {
  TestServer ts;
  std::atomic<int> hits{0};
  ts.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 404;
  });
  ts.start();

  const RemoteScorer scorer(quick_config(ts.url(), /*retries=*/2));
  const Query q = Query::make("q", "x");
  const std::vector<std::vector<std::string>> texts = {{"a"}};
  try {
    scorer.score_batch(q, texts);
    FAIL("expected RemoteError");
  } catch (const RemoteError& e) {
    CHECK(e.status() == 404);
  }
  CHECK(hits.load() == 1);  // 404 is permanent, no retries
}

TEST_CASE("retryable failures are retried up to the budget") {
  TestServer ts;
  std::atomic<int> hits{0};
  ts.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    const int n = ++hits;
    if (n <= 2) {
      res.status = 500;
      return;
    }
    res.set_content(R"({"scores":[1.0]})", "application/json");
  });
  ts.start();

  const RemoteScorer scorer(quick_config(ts.url(), /*retries=*/2));
  const Query q = Query::make("q", "x");
  const std::vector<std::vector<std::string>> texts = {{"a"}};
  CHECK(scorer.score_batch(q, texts)[0] == doctest::Approx(1.0));
  CHECK(hits.load() == 3);
}

TEST_CASE("exhausted retries surface the last retryable status") {
  TestServer ts;
  std::atomic<int> hits{0};
  ts.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  ts.start();

  const RemoteScorer scorer(quick_config(ts.url(), /*retries=*/1));
  const Query q = Query::make("q", "x");
  const std::vector<std::vector<std::string>> texts = {{"a"}};
  try {
    scorer.score_batch(q, texts);
    FAIL("expected RemoteError");
  } catch (const RemoteError& e) {
    CHECK(e.status() == 503);
  }
  CHECK(hits.load() == 2);  // initial attempt + 1 retry
}

TEST_CASE("malformed and mismatched responses are rejected") {
  TestServer ts;
  std::string body = "not json";
  ts.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(body, "application/json");
  });
  ts.start();

  const RemoteScorer scorer(quick_config(ts.url()));
  const Query q = Query::make("q", "x");
  const std::vector<std::vector<std::string>> two = {{"a"}, {"b"}};

  CHECK_THROWS_AS(scorer.score_batch(q, two), RemoteError);

  body = R"({"scores":[1.0]})";  // one score for two texts
  CHECK_THROWS_AS(scorer.score_batch(q, two), RemoteError);

  body = R"({"wrong":[]})";
  CHECK_THROWS_AS(scorer.score_batch(q, two), RemoteError);
}

TEST_CASE("concurrent callers share the in-flight budget") {
  TestServer ts;
  std::atomic<int> current{0};
  std::atomic<int> peak{0};
  ts.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
    const int now = ++current;
    int prev = peak.load();
    while (prev < now && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --current;
    res.set_content(R"({"scores":[1.0]})", "application/json");
  });
  ts.start();

  RemoteScorerConfig config = quick_config(ts.url());
  config.max_in_flight = 2;
  const RemoteScorer scorer(config);
  const Query q = Query::make("q", "x");

  std::vector<std::thread> workers;
  std::atomic<int> ok{0};
  for (int i = 0; i < 6; ++i) {
    workers.emplace_back([&] {
      const std::vector<std::string> tokens = {"a"};
      if (scorer.score(q, tokens) == 1.0) ++ok;
    });
  }
  for (auto& w : workers) w.join();
  CHECK(ok.load() == 6);
  CHECK(peak.load() <= 2);
}

TEST_CASE("base url handling") {
  SUBCASE("path prefixes are preserved") {
    TestServer ts;
    ts.server.Post("/api/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"scores":[2.0]})", "application/json");
    });
    ts.start();
    const RemoteScorer scorer(quick_config(ts.url() + "/api/v1/"));
    const Query q = Query::make("q", "x");
    const std::vector<std::string> tokens = {"a"};
    CHECK(scorer.score(q, tokens) == doctest::Approx(2.0));
  }

  SUBCASE("config validation") {
    CHECK_THROWS_AS(RemoteScorer(quick_config("")), ValidationError);
    RemoteScorerConfig config = quick_config("http://127.0.0.1:1");
    config.max_in_flight = 0;
    CHECK_THROWS_AS(RemoteScorer{config}, ValidationError);
  }

  SUBCASE("unreachable host maps to status 0") {
    RemoteScorerConfig config = quick_config("http://127.0.0.1:1");
    config.timeout_s = 0.5;
    const RemoteScorer scorer(config);
    const Query q = Query::make("q", "x");
    const std::vector<std::string> tokens = {"a"};
    try {
      scorer.score(q, tokens);
      FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
      CHECK(e.status() == 0);
    }
  }
}

TEST_CASE("remote encoder returns vectors and checks dimensions") {
  TestServer ts;
  ts.server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    const nlohmann::json body = nlohmann::json::parse(req.body);
    nlohmann::json out;
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < body["texts"].size(); ++i) {
      rows.push_back(std::vector<float>{1.0f, 0.5f, 0.25f});
    }
    out["embeddings"] = rows;
    res.set_content(out.dump(), "application/json");
  });
  ts.start();

  const RemoteEncoder encoder(ts.url(), 3, 5.0);
  const auto vectors = encoder.embed({"alpha", "beta"});
  REQUIRE(vectors.size() == 2);
  CHECK(vectors[0][1] == doctest::Approx(0.5f));

  // Expected dimension 0 accepts any width; a fixed mismatch is an error.
  const RemoteEncoder any_dim(ts.url(), 0, 5.0);
  CHECK(any_dim.embed({"x"})[0].size() == 3);
  const RemoteEncoder wrong(ts.url(), 4, 5.0);
  CHECK_THROWS_AS(wrong.embed({"x"}), ScorerError);
}

TEST_CASE("remote encoder rejects row count mismatches") {
  TestServer ts;
  ts.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embeddings":[[1.0]]})", "application/json");
  });
  ts.start();

  const RemoteEncoder encoder(ts.url(), 1, 5.0);
  CHECK_THROWS_AS(encoder.embed({"a", "b"}), RemoteError);
}
