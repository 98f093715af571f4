// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include <doctest.h>

#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfrank/error.hpp"
#include "cfrank/scoring.hpp"
#include "fixtures.hpp"

using namespace cfrank;

namespace {

std::vector<Document> toy_corpus() {
  return {Document::make("d1", "cat cat dog"), Document::make("d2", "dog mouse"),
          Document::make("d3", "bird")};
}

}  // namespace

TEST_CASE("bm25 idf keeps every term weight positive") {
  const Bm25Scorer bm25(toy_corpus());
  // ln(1 + (N - df + 0.5)/(df + 0.5)) with N = 3.
  CHECK(bm25.idf("cat") == doctest::Approx(0.9808292530117263).epsilon(1e-12));
  CHECK(bm25.idf("dog") == doctest::Approx(0.47000362924573563).epsilon(1e-12));
  CHECK(bm25.idf("zz") == doctest::Approx(2.0794415416798357).epsilon(1e-12));
  CHECK(bm25.idf("zz") > 0.0);
  CHECK(bm25.average_doc_length() == doctest::Approx(2.0));
  CHECK(bm25.corpus_size() == 3);
}

TEST_CASE("bm25 matches the hand-computed score") {
  const Bm25Scorer bm25(toy_corpus());
  const Query q = Query::make("q", "cat dog");
  // tf(cat)=2, tf(dog)=1 in d1 of length 3, k1=0.9, b=0.4, avg len 2.
  CHECK(bm25.score_id(q, "d1") == doctest::Approx(1.639444251709342).epsilon(1e-12));

  const std::vector<std::string> d1_tokens = {"cat", "cat", "dog"};
  CHECK(bm25.score(q, d1_tokens) == doctest::Approx(1.639444251709342).epsilon(1e-12));
}

TEST_CASE("bm25 scores arbitrary sequences with their own length") {
  const Bm25Scorer bm25(toy_corpus());
  const Query q = Query::make("q", "cat dog");
  const std::vector<std::string> just_dog = {"dog"};
  CHECK(bm25.score(q, just_dog) == doctest::Approx(0.5191900555621497).epsilon(1e-12));
}

TEST_CASE("bm25 counts duplicate query terms once") {
  const Bm25Scorer bm25(toy_corpus());
  const Query once = Query::make("a", "dog");
  const Query twice = Query::make("b", "dog dog");
  CHECK(bm25.score_id(twice, "d2") == doctest::Approx(bm25.score_id(once, "d2")));
  // d2 has average length, so the length normalization cancels.
  CHECK(bm25.score_id(twice, "d2") == doctest::Approx(0.47000362924573563).epsilon(1e-12));
}

TEST_CASE("bm25 edge cases") {
  const Bm25Scorer bm25(toy_corpus());
  const Query q = Query::make("q", "cat");
  CHECK(bm25.score(q, std::vector<std::string>{}) == 0.0);
  const std::vector<std::string> no_match = {"mouse"};
  CHECK(bm25.score(q, no_match) == 0.0);
  CHECK_THROWS_AS(bm25.score_id(q, "dX"), ScorerError);
  CHECK_THROWS_AS(Bm25Scorer({}), ValidationError);
}

TEST_CASE("score_batch defaults to per-item scoring") {
  const Bm25Scorer bm25(toy_corpus());
  const Query q = Query::make("q", "cat dog");
  const std::vector<std::vector<std::string>> texts = {
      {"cat", "cat", "dog"}, {"dog"}, {}};
  const std::vector<double> scores = bm25.score_batch(q, texts);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0] == doctest::Approx(bm25.score(q, texts[0])));
  CHECK(scores[1] == doctest::Approx(bm25.score(q, texts[1])));
  CHECK(scores[2] == 0.0);
}

TEST_CASE("rank_corpus orders by score descending then id ascending") {
  // db and da tie exactly (identical text); ids break the tie.
  const std::vector<Document> docs = {Document::make("db", "dog mouse"),
                                      Document::make("da", "dog mouse"),
                                      Document::make("dc", "cat cat dog")};
  const Bm25Scorer bm25(docs);
  const Query q = Query::make("q", "cat");
  const RankedList ranked = rank_corpus(bm25, q, {"db", "da", "dc"});
  REQUIRE(ranked.entries.size() == 3);
  CHECK(ranked.entries[0].first == "dc");
  CHECK(ranked.entries[1].first == "da");
  CHECK(ranked.entries[2].first == "db");
  CHECK(ranked.rank_of("dc") == 1);
  CHECK(ranked.rank_of("da") == 2);
  CHECK(ranked.rank_of("db") == 3);
  CHECK_THROWS_AS(ranked.rank_of("dx"), ScorerError);
  CHECK_THROWS_AS(rank_corpus(bm25, q, {}), ValidationError);
}

TEST_CASE("similarity functions match their definitions") {
  const std::vector<float> a = {1.0f, 2.0f, 2.0f};
  const std::vector<float> b = {2.0f, 4.0f, 4.0f};
  const std::vector<float> x = {1.0f, 0.0f, 0.0f};
  const std::vector<float> y = {0.0f, 1.0f, 0.0f};
  const std::vector<float> zero = {0.0f, 0.0f, 0.0f};

  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(x, y) == doctest::Approx(0.0));
  CHECK(cosine_similarity(x, zero) == 0.0);  // zero vector convention
  CHECK(dot_similarity(a, b) == doctest::Approx(18.0));
  CHECK_THROWS_AS(cosine_similarity(a, x.data() ? std::span<const float>(x.data(), 2)
                                                : std::span<const float>{}),
                  ScorerError);

  CHECK(similarity_from_string("cosine") == Similarity::kCosine);
  CHECK(similarity_from_string("dot") == Similarity::kDot);
  CHECK_THROWS_AS(similarity_from_string("euclid"), ValidationError);
}

TEST_CASE("embedding store round-trips through the binary format") {
  const auto dir = fixtures::make_temp_dir("emb_store");
  std::unordered_map<std::string, std::vector<float>> vectors = {
      {"q1", {1.0f, 0.0f, 0.0f}}, {"d1", {0.6f, 0.8f, 0.0f}}};
  const EmbeddingStore store(3, vectors);
  const std::string path = (dir / "store.bin").string();
  store.save(path);

  const EmbeddingStore loaded = EmbeddingStore::load(path);
  CHECK(loaded.dimension() == 3);
  CHECK(loaded.size() == 2);
  CHECK(loaded.contains("q1"));
  CHECK_FALSE(loaded.contains("qX"));
  REQUIRE(loaded.vector_for("d1").size() == 3);
  CHECK(loaded.vector_for("d1")[1] == doctest::Approx(0.8f));
  CHECK_THROWS_AS(loaded.vector_for("qX"), ScorerError);
}

TEST_CASE("embedding store rejects malformed input") {
  const auto dir = fixtures::make_temp_dir("emb_bad");
  const std::string path = (dir / "bad.bin").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC";
  }
  CHECK_THROWS_AS(EmbeddingStore::load(path), ValidationError);
  CHECK_THROWS_AS(EmbeddingStore::load((dir / "missing.bin").string()), ValidationError);

  std::unordered_map<std::string, std::vector<float>> short_vec = {{"a", {1.0f}}};
  CHECK_THROWS_AS(EmbeddingStore(2, short_vec), ValidationError);
  CHECK_THROWS_AS(EmbeddingStore(0, {}), ValidationError);
}

TEST_CASE("embedding scorer compares stored query and document vectors") {
  auto query_store = std::make_shared<EmbeddingStore>(
      3, std::unordered_map<std::string, std::vector<float>>{{"q1", {1.0f, 0.0f, 0.0f}}});
  auto doc_store = std::make_shared<EmbeddingStore>(
      3, std::unordered_map<std::string, std::vector<float>>{{"d1", {0.6f, 0.8f, 0.0f}},
                                                             {"d2", {0.0f, 1.0f, 0.0f}}});
  const EmbeddingScorer scorer(query_store, doc_store);
  const Query q = Query::make("q1", "anything");
  CHECK(scorer.name() == "embedding");
  CHECK(scorer.score_id(q, "d1") == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(scorer.score_id(q, "d2") == doctest::Approx(0.0));

  // Arbitrary text resolves through the store when the joined text is a
  // known id; otherwise it needs the remote encoder.
  CHECK(scorer.score(q, std::vector<std::string>{}) == 0.0);
  const std::vector<std::string> d1_key = {"d1"};
  CHECK(scorer.score(q, d1_key) == doctest::Approx(0.6).epsilon(1e-6));
  const std::vector<std::string> unknown = {"novel", "text"};
  CHECK_THROWS_AS(scorer.score(q, unknown), ScorerError);

  auto mismatched = std::make_shared<EmbeddingStore>(
      2, std::unordered_map<std::string, std::vector<float>>{{"d1", {1.0f, 0.0f}}});
  CHECK_THROWS_AS(EmbeddingScorer(query_store, mismatched), ValidationError);
  CHECK_THROWS_AS(EmbeddingScorer(nullptr, doc_store), ValidationError);
}

TEST_CASE("join_tokens inserts single spaces") {
  const std::vector<std::string> tokens = {"a", "b", "c"};
  CHECK(join_tokens(tokens) == "a b c");
  CHECK(join_tokens(std::vector<std::string>{}) == "");
}
