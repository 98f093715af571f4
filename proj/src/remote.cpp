// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cfrank/error.hpp"
#include "cfrank/scoring.hpp"

namespace cfrank {

namespace {

struct ParsedUrl {
  std::string host_port;  // scheme://host:port for httplib::Client
  std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& base_url) {
  std::string rest = base_url;
  std::string scheme = "http://";
  if (rest.rfind("http://", 0) == 0) {
    rest = rest.substr(7);
  } else if (rest.rfind("https://", 0) == 0) {
    throw ValidationError("https endpoints are not supported: " + base_url);
  }
  const size_t slash = rest.find('/');
  ParsedUrl out;
  out.host_port = scheme + (slash == std::string::npos ? rest : rest.substr(0, slash));
  out.path_prefix = slash == std::string::npos ? "" : rest.substr(slash);
  if (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

void apply_timeout(httplib::Client& client, double timeout_s) {
  const auto secs = static_cast<time_t>(timeout_s);
  const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
}

bool retryable_status(int status) { return status >= 500 || status == 429; }

// POSTs JSON with bounded retries. Throws RemoteError carrying the HTTP
// status (0 for transport failures).
nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body, double timeout_s, size_t retries) {
  const ParsedUrl url = parse_base_url(base_url);
  std::string last_error = "unreachable";
  int last_status = 0;
  for (size_t attempt = 0; attempt <= retries; ++attempt) {
    httplib::Client client(url.host_port);
    apply_timeout(client, timeout_s);
    auto res = client.Post(url.path_prefix + path, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status) + " from " + path;
      last_status = res->status;
      if (!retryable_status(res->status)) break;
      continue;
    }
    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw RemoteError("malformed JSON response from " + path, 200);
    return parsed;
  }
  throw RemoteError(last_error, last_status);
}

}  // namespace

RemoteEncoder::RemoteEncoder(std::string base_url, size_t expected_dimension, double timeout_s)
    : base_url_(std::move(base_url)), dimension_(expected_dimension), timeout_s_(timeout_s) {}

std::vector<std::vector<float>> RemoteEncoder::embed(const std::vector<std::string>& texts) const {
  nlohmann::json body;
  body["texts"] = texts;
  const nlohmann::json response = post_json(base_url_, "/embed", body, timeout_s_, 2);
  if (!response.contains("embeddings") || !response["embeddings"].is_array() ||
      response["embeddings"].size() != texts.size()) {
    throw RemoteError("embedding count mismatch from /embed", 200);
  }
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& row : response["embeddings"]) {
    std::vector<float> vec = row.get<std::vector<float>>();
    if (dimension_ != 0 && vec.size() != dimension_) {
      throw ScorerError("dimension mismatch from remote encoder: got " +
                        std::to_string(vec.size()) + ", expected " + std::to_string(dimension_));
    }
    out.push_back(std::move(vec));
  }
  return out;
}

struct RemoteScorer::Impl {
  RemoteScorerConfig config;
  std::unordered_map<std::string, std::string> doc_texts;

  // Bounded in-flight budget shared by all callers.
  mutable std::mutex mutex;
  mutable std::condition_variable slots_free;
  mutable size_t in_flight = 0;

  void acquire() const {
    std::unique_lock<std::mutex> lock(mutex);
    slots_free.wait(lock, [&] { return in_flight < config.max_in_flight; });
    ++in_flight;
  }
  void release() const {
    {
      std::lock_guard<std::mutex> lock(mutex);
      --in_flight;
    }
    slots_free.notify_one();
  }
};

RemoteScorer::RemoteScorer(RemoteScorerConfig config) : impl_(std::make_unique<Impl>()) {
  if (config.base_url.empty()) throw ValidationError("remote scorer: empty base url");
  if (config.max_in_flight == 0) throw ValidationError("remote scorer: max_in_flight must be >= 1");
  impl_->config = std::move(config);
}

RemoteScorer::~RemoteScorer() = default;

void RemoteScorer::register_documents(const std::vector<Document>& docs) {
  for (const Document& doc : docs) impl_->doc_texts[doc.id] = doc.normalized_text();
}

std::vector<double> RemoteScorer::score_batch(
    const Query& query, const std::vector<std::vector<std::string>>& texts) const {
  std::vector<std::string> joined;
  joined.reserve(texts.size());
  for (const auto& tokens : texts) joined.push_back(join_tokens(tokens));

  nlohmann::json body;
  body["query"] = query.text;
  body["texts"] = joined;

  impl_->acquire();
  nlohmann::json response;
  try {
    response = post_json(impl_->config.base_url, "/score", body, impl_->config.timeout_s,
                         impl_->config.retries);
  } catch (...) {
    impl_->release();
    throw;
  }
  impl_->release();

  if (!response.contains("scores") || !response["scores"].is_array() ||
      response["scores"].size() != joined.size()) {
    throw RemoteError("score count mismatch from /score", 200);
  }
  return response["scores"].get<std::vector<double>>();
}

double RemoteScorer::score(const Query& query, TokenView tokens) const {
  const std::vector<std::vector<std::string>> one = {
      std::vector<std::string>(tokens.begin(), tokens.end())};
  return score_batch(query, one).front();
}

double RemoteScorer::score_id(const Query& query, const std::string& doc_id) const {
  const auto it = impl_->doc_texts.find(doc_id);
  if (it == impl_->doc_texts.end()) {
    throw ScorerError("remote scorer: unregistered doc id " + doc_id);
  }
  return score(query, tokenize(it->second));
}

}  // namespace cfrank
