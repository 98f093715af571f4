// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfrank/corpus.hpp"

namespace cfrank {

using TokenView = std::span<const std::string>;

/// Relevance function f(q, d). Scorers are immutable after construction and
/// safe for concurrent scoring.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::string name() const = 0;

  /// Relevance of an arbitrary tokenized text to the query.
  virtual double score(const Query& query, TokenView tokens) const = 0;

  /// Batched variant; remote scorers override this to amortize round-trips.
  virtual std::vector<double> score_batch(const Query& query,
                                          const std::vector<std::vector<std::string>>& texts) const;

  /// Relevance of a corpus document known by id. Scorers without a document
  /// registry throw ScorerError.
  virtual double score_id(const Query& query, const std::string& doc_id) const;
};

struct RankedList {
  std::string query_id;
  std::vector<std::pair<std::string, double>> entries;  // descending score, ties by id
  std::unordered_map<std::string, size_t> rank_by_id;   // 1-based

  size_t rank_of(const std::string& doc_id) const;
};

/// Full ordering of the candidates: descending score, ties broken by doc id
/// ascending.
RankedList rank_corpus(const Scorer& scorer, const Query& query,
                       const std::vector<std::string>& candidate_ids);

// ----- BM25 -----

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

/// Okapi BM25 over a fixed corpus. idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)),
/// which keeps every term weight positive. Scoring an arbitrary token
/// sequence uses the corpus document-frequency statistics with the sequence's
/// own length, so counterfactual copies of a document are scored against the
/// same collection as the original.
class Bm25Scorer : public Scorer {
 public:
  Bm25Scorer(const std::vector<Document>& corpus, Bm25Params params = {});

  std::string name() const override { return "bm25"; }
  double score(const Query& query, TokenView tokens) const override;
  double score_id(const Query& query, const std::string& doc_id) const override;

  double idf(const std::string& term) const;
  double average_doc_length() const { return avg_doc_len_; }
  size_t corpus_size() const { return num_docs_; }

 private:
  Bm25Params params_;
  size_t num_docs_ = 0;
  double avg_doc_len_ = 0.0;
  std::unordered_map<std::string, size_t> doc_freq_;
  std::unordered_map<std::string, std::vector<std::string>> doc_tokens_;
};

// ----- embeddings -----

/// Fixed-dimension id -> vector map, loadable from the binary CFRKEMB1
/// format (u32 LE dimension, u64 LE record count, then per record a u16 LE
/// id byte length, the UTF-8 id, and dimension * f32 LE values).
class EmbeddingStore {
 public:
  EmbeddingStore(size_t dimension, std::unordered_map<std::string, std::vector<float>> vectors);

  static EmbeddingStore load(const std::string& path);
  void save(const std::string& path) const;

  size_t dimension() const { return dimension_; }
  size_t size() const { return vectors_.size(); }
  bool contains(const std::string& id) const { return vectors_.count(id) > 0; }
  const std::vector<float>& vector_for(const std::string& id) const;

 private:
  size_t dimension_;
  std::unordered_map<std::string, std::vector<float>> vectors_;
};

enum class Similarity { kCosine, kDot };

Similarity similarity_from_string(const std::string& name);

double cosine_similarity(std::span<const float> a, std::span<const float> b);
double dot_similarity(std::span<const float> a, std::span<const float> b);

/// Remote text-to-vector encoder: POST /embed {"texts": [...]} ->
/// {"embeddings": [[...], ...]}.
class RemoteEncoder {
 public:
  RemoteEncoder(std::string base_url, size_t expected_dimension, double timeout_s = 30.0);
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) const;

 private:
  std::string base_url_;
  size_t dimension_;
  double timeout_s_;
};

/// Resolves text to a vector: stored id wins, otherwise the remote encoder.
class EmbeddingResolver {
 public:
  explicit EmbeddingResolver(const EmbeddingStore* store,
                             std::shared_ptr<const RemoteEncoder> remote = nullptr);

  /// `key` is an id when present in the store; any other string is treated
  /// as raw text for the remote encoder. Throws ScorerError("missing
  /// embedding") when neither route applies and on dimension mismatches.
  std::vector<float> embed_text(const std::string& key) const;

 private:
  const EmbeddingStore* store_;
  std::shared_ptr<const RemoteEncoder> remote_;
};

/// sim(e_q, e_d) over precomputed query/document embeddings. Arbitrary-text
/// scoring goes through the remote encoder when configured.
class EmbeddingScorer : public Scorer {
 public:
  EmbeddingScorer(std::shared_ptr<const EmbeddingStore> query_store,
                  std::shared_ptr<const EmbeddingStore> doc_store,
                  Similarity similarity = Similarity::kCosine,
                  std::shared_ptr<const RemoteEncoder> remote = nullptr);

  std::string name() const override { return "embedding"; }
  double score(const Query& query, TokenView tokens) const override;
  double score_id(const Query& query, const std::string& doc_id) const override;

 private:
  std::vector<float> query_vector(const Query& query) const;
  double similarity(std::span<const float> a, std::span<const float> b) const;

  std::shared_ptr<const EmbeddingStore> query_store_;
  std::shared_ptr<const EmbeddingStore> doc_store_;
  Similarity sim_;
  std::shared_ptr<const RemoteEncoder> remote_;
};

// ----- remote scoring -----

struct RemoteScorerConfig {
  std::string base_url;           // e.g. http://127.0.0.1:8080
  size_t max_in_flight = 8;       // bound on concurrent requests
  double timeout_s = 30.0;        // per-request timeout
  size_t retries = 2;             // additional attempts on retryable failures
};

/// HTTP scorer: POST /score with {"query": ..., "texts": [...]} returning
/// {"scores": [...]} of equal length. Non-200 responses raise RemoteError
/// with the status code. Requests are batched; concurrent callers share a
/// bounded in-flight budget.
class RemoteScorer : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerConfig config);
  ~RemoteScorer() override;

  std::string name() const override { return "remote"; }
  double score(const Query& query, TokenView tokens) const override;
  std::vector<double> score_batch(const Query& query,
                                  const std::vector<std::vector<std::string>>& texts) const override;
  double score_id(const Query& query, const std::string& doc_id) const override;

  /// Registers corpus texts so score_id can resolve ids.
  void register_documents(const std::vector<Document>& docs);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string join_tokens(TokenView tokens);

}  // namespace cfrank
