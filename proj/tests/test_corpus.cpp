// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "cfrank/corpus.hpp"
#include "cfrank/error.hpp"
#include "fixtures.hpp"

using namespace cfrank;

namespace {

Document doc_with_tokens(const std::string& id, size_t count) {
  std::string text;
  for (size_t i = 0; i < count; ++i) {
    if (i > 0) text.push_back(' ');
    text += "t" + std::to_string(i);
  }
  return Document::make(id, text);
}

}  // namespace

TEST_CASE("tokenize lowercases and strips surrounding punctuation") {
  CHECK(tokenize("The cat, sat!") == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(tokenize("\"Hello\" -- world...") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("don't stop") == std::vector<std::string>{"don't", "stop"});
  CHECK(tokenize("...") == std::vector<std::string>{});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("  a\tb\nc  ") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("tokenize splits on unicode whitespace") {
  // U+00A0 NO-BREAK SPACE and U+2003 EM SPACE both separate tokens.
  CHECK(tokenize("a\xC2\xA0") == std::vector<std::string>{"a"});
  CHECK(tokenize("a\xC2\xA0난") == std::vector<std::string>{"a", "난"});
  CHECK(tokenize("left\xE2\x80\x83right") == std::vector<std::string>{"left", "right"});
}

TEST_CASE("tokenize_with_spans reports raw piece ranges") {
  std::vector<std::pair<size_t, size_t>> spans;
  const std::vector<std::string> tokens = tokenize_with_spans("Hi there.", &spans);
  REQUIRE(tokens == std::vector<std::string>{"hi", "there"});
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == std::pair<size_t, size_t>{0, 2});
  CHECK(spans[1] == std::pair<size_t, size_t>{3, 9});
}

TEST_CASE("sentence-ending tokens are detected from raw punctuation") {
  const Document doc = Document::make("d", "He said (end.) More? yes");
  REQUIRE(doc.tokens == std::vector<std::string>{"he", "said", "end", "more", "yes"});
  CHECK_FALSE(doc.token_ends_sentence(0));
  CHECK_FALSE(doc.token_ends_sentence(1));
  CHECK(doc.token_ends_sentence(2));  // "(end.)" carries a terminal period
  CHECK(doc.token_ends_sentence(3));
  CHECK_FALSE(doc.token_ends_sentence(4));
  CHECK_FALSE(doc.token_ends_sentence(99));
}

TEST_CASE("normalized_text joins tokens with single spaces") {
  const Document doc = Document::make("d", "  The   CAT sat. ");
  CHECK(doc.normalized_text() == "the cat sat");
}

TEST_CASE("segment emits a single truncated window for short documents") {
  const SegmentedDocument seg = segment(doc_with_tokens("d", 100), 128, 0.0);
  REQUIRE(seg.passages.size() == 1);
  CHECK(seg.passages[0].token_start == 0);
  CHECK(seg.passages[0].token_end == 100);
  CHECK(seg.stride == 128);
}

TEST_CASE("segment with 50% overlap produces interleaved windows") {
  const SegmentedDocument seg = segment(doc_with_tokens("d", 256), 128, 0.5);
  REQUIRE(seg.passages.size() == 3);
  CHECK(seg.passages[0].token_start == 0);
  CHECK(seg.passages[0].token_end == 128);
  CHECK(seg.passages[1].token_start == 64);
  CHECK(seg.passages[1].token_end == 192);
  CHECK(seg.passages[2].token_start == 128);
  CHECK(seg.passages[2].token_end == 256);
  CHECK(seg.stride == 64);
}

TEST_CASE("segment truncates the final window at the document end") {
  const SegmentedDocument seg = segment(doc_with_tokens("d", 200), 128, 0.5);
  REQUIRE(seg.passages.size() == 3);
  CHECK(seg.passages[2].token_start == 128);
  CHECK(seg.passages[2].token_end == 200);
}

TEST_CASE("segment skips windows that add no new tokens") {
  // 160 tokens at window 16 / stride 8: the window starting at 152 would only
  // repeat tokens covered by the window at 144.
  const SegmentedDocument seg = segment(doc_with_tokens("d", 160), 16, 0.5);
  CHECK(seg.passages.size() == 19);
  CHECK(seg.passages.back().token_start == 144);
  CHECK(seg.passages.back().token_end == 160);
}

TEST_CASE("segment validates inputs") {
  CHECK_THROWS_AS(segment(Document::make("d", "..."), 16, 0.0), ValidationError);
  CHECK_THROWS_AS(segment(doc_with_tokens("d", 10), 10, 0.25), ValidationError);  // stride 7.5
  CHECK_THROWS_AS(segment(doc_with_tokens("d", 10), 10, 1.0), ValidationError);
  CHECK_THROWS_AS(segment(doc_with_tokens("d", 10), 10, -0.1), ValidationError);
  CHECK_THROWS_AS(segment(doc_with_tokens("d", 10), 1, 0.0), ValidationError);
}

TEST_CASE("non-overlapping windows concatenate back to the document") {
  const Document doc = doc_with_tokens("d", 96);  // multiple of the window
  const SegmentedDocument seg = segment(doc, 16, 0.0);
  std::vector<std::string> joined;
  for (size_t i = 0; i < seg.passages.size(); ++i) {
    const std::vector<std::string> tokens = seg.passage_tokens(i);
    joined.insert(joined.end(), tokens.begin(), tokens.end());
  }
  CHECK(joined == doc.tokens);
}

TEST_CASE("gold_coverage measures overlap against the gold length") {
  const Document doc = Document::make("d", "a b c d e f g h");
  const SegmentedDocument seg = segment(doc, 4, 0.0);
  CHECK(gold_coverage(seg, tokenize("e f g h")) == std::vector<double>{0.0, 1.0});
  CHECK(gold_coverage(seg, tokenize("c d e f")) == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(gold_coverage(seg, tokenize("")), ValidationError);
  CHECK_THROWS_WITH_AS(gold_coverage(seg, tokenize("zz yy")), "gold span missing", Error);
}

TEST_CASE("locate_positive marks the window only at 90% coverage") {
  const Document doc = doc_with_tokens("d", 20);
  SegmentedDocument seg = segment(doc, 10, 0.0);

  SUBCASE("exact window match") {
    std::string gold;
    for (size_t i = 10; i < 20; ++i) gold += doc.tokens[i] + " ";
    const PositiveLocation loc = locate_positive(seg, tokenize(gold));
    CHECK(loc.index == 1);
    CHECK(loc.coverage == doctest::Approx(1.0));
    CHECK(loc.covered);
    CHECK(seg.positive_index == 1);
    CHECK(seg.has_gold);
  }

  SUBCASE("coverage of exactly 0.9 counts as covered") {
    // Gold spans tokens [1, 11): window [0, 10) covers 9 of 10 gold tokens.
    std::string gold;
    for (size_t i = 1; i < 11; ++i) gold += doc.tokens[i] + " ";
    const PositiveLocation loc = locate_positive(seg, tokenize(gold));
    CHECK(loc.index == 0);
    CHECK(loc.coverage == doctest::Approx(0.9));
    CHECK(loc.covered);
    CHECK(seg.positive_index == 0);
  }

  SUBCASE("straddling gold stays uncovered, ties keep the lower index") {
    // Gold spans tokens [5, 15): both windows cover 5 of 10.
    std::string gold;
    for (size_t i = 5; i < 15; ++i) gold += doc.tokens[i] + " ";
    const PositiveLocation loc = locate_positive(seg, tokenize(gold));
    CHECK(loc.index == 0);
    CHECK(loc.coverage == doctest::Approx(0.5));
    CHECK_FALSE(loc.covered);
    CHECK(seg.positive_index == std::nullopt);
    CHECK(seg.has_gold);
    CHECK(seg.positive_coverage == doctest::Approx(0.5));
  }
}

TEST_CASE("corpus_stats counts covered golds and averages window counts") {
  const Document doc = doc_with_tokens("d", 20);
  SegmentedDocument covered = segment(doc, 10, 0.0);
  std::string gold;
  for (size_t i = 10; i < 20; ++i) gold += doc.tokens[i] + " ";
  locate_positive(covered, tokenize(gold));

  SegmentedDocument uncovered = segment(doc, 10, 0.0);
  std::string straddle;
  for (size_t i = 5; i < 15; ++i) straddle += doc.tokens[i] + " ";
  locate_positive(uncovered, tokenize(straddle));

  const SegmentedDocument no_gold = segment(doc_with_tokens("e", 30), 10, 0.0);

  const CorpusStats stats = corpus_stats({covered, uncovered, no_gold});
  CHECK(stats.positive_psg_ratio == doctest::Approx(0.5));
  CHECK(stats.average_psg_num == doctest::Approx((2.0 + 2.0 + 3.0) / 3.0));

  CHECK_THROWS_AS(corpus_stats({}), ValidationError);
}

TEST_CASE("corpus_stats_json is a stable two-field object") {
  CorpusStats stats;
  stats.positive_psg_ratio = 0.5;
  stats.average_psg_num = 3.0;
  CHECK(corpus_stats_json(stats) == "{\"average_psg_num\":3.0,\"positive_psg_ratio\":0.5}");
}

TEST_CASE("document and query loaders round-trip JSONL") {
  const auto dir = fixtures::make_temp_dir("corpus_load");
  {
    std::ofstream out(dir / "docs.jsonl");
    out << R"({"id":"d1","text":"alpha beta"})" << "\n";
    out << "\n";  // blank lines are skipped
    out << R"({"id":"d2","text":"Gamma, delta!"})" << "\n";
  }
  const std::vector<Document> docs = load_documents((dir / "docs.jsonl").string());
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].id == "d1");
  CHECK(docs[1].tokens == std::vector<std::string>{"gamma", "delta"});

  const auto index = index_by_id(docs);
  CHECK(index.at("d2") == 1);

  {
    std::ofstream out(dir / "queries.jsonl");
    out << R"({"id":"q1","text":"What is alpha?"})" << "\n";
  }
  const std::vector<Query> queries = load_queries((dir / "queries.jsonl").string());
  REQUIRE(queries.size() == 1);
  CHECK(queries[0].tokens == std::vector<std::string>{"what", "is", "alpha"});
  CHECK(index_queries_by_id(queries).at("q1") == 0);
}

TEST_CASE("loaders reject malformed and duplicate records with line numbers") {
  const auto dir = fixtures::make_temp_dir("corpus_bad");
  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"id":"d1","text":"x"})" << "\n";
    out << "not json\n";
  }
  CHECK_THROWS_WITH_AS(load_documents((dir / "bad.jsonl").string()),
                       doctest::Contains(":2: malformed JSON line"), ValidationError);

  {
    std::ofstream out(dir / "dup.jsonl");
    out << R"({"id":"d1","text":"x"})" << "\n";
    out << R"({"id":"d1","text":"y"})" << "\n";
  }
  CHECK_THROWS_WITH_AS(load_documents((dir / "dup.jsonl").string()),
                       doctest::Contains(":2: duplicate document id d1"), ValidationError);

  {
    std::ofstream out(dir / "nofield.jsonl");
    out << R"({"id":"d1"})" << "\n";
  }
  CHECK_THROWS_AS(load_documents((dir / "nofield.jsonl").string()), ValidationError);
  CHECK_THROWS_AS(load_documents((dir / "missing.jsonl").string()), ValidationError);
}

TEST_CASE("triple loader validates ids and field count") {
  const auto dir = fixtures::make_temp_dir("corpus_triples");
  const std::vector<Document> docs = {Document::make("d1", "alpha beta gamma")};
  const std::vector<Query> queries = {Query::make("q1", "alpha")};
  const auto doc_index = index_by_id(docs);
  const auto query_index = index_queries_by_id(queries);

  {
    std::ofstream out(dir / "ok.tsv");
    out << "q1\td1\talpha beta\n";
  }
  const std::vector<Triple> triples =
      load_triples((dir / "ok.tsv").string(), query_index, doc_index);
  REQUIRE(triples.size() == 1);
  CHECK(triples[0].query_id == "q1");
  CHECK(triples[0].doc_id == "d1");
  CHECK(triples[0].relevant_passage_text == "alpha beta");

  {
    std::ofstream out(dir / "unknown_query.tsv");
    out << "qX\td1\talpha\n";
  }
  CHECK_THROWS_WITH_AS(load_triples((dir / "unknown_query.tsv").string(), query_index, doc_index),
                       doctest::Contains("unknown query id qX"), ValidationError);

  {
    std::ofstream out(dir / "unknown_doc.tsv");
    out << "q1\tdX\talpha\n";
  }
  CHECK_THROWS_WITH_AS(load_triples((dir / "unknown_doc.tsv").string(), query_index, doc_index),
                       doctest::Contains("unknown doc id dX"), ValidationError);

  {
    std::ofstream out(dir / "two_fields.tsv");
    out << "q1\td1\n";
  }
  CHECK_THROWS_WITH_AS(load_triples((dir / "two_fields.tsv").string(), query_index, doc_index),
                       doctest::Contains("expected 3 tab-separated fields"), ValidationError);
}
