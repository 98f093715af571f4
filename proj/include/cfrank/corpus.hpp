// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cfrank {

/// Tokenization: split on Unicode whitespace, ASCII-lowercase, strip
/// surrounding (not inner) ASCII punctuation. Pieces that are pure
/// punctuation produce no token.
std::vector<std::string> tokenize(const std::string& text);

/// Like tokenize(), but also reports the byte range of each token's
/// whitespace-delimited piece in the original text. The raw piece keeps its
/// punctuation, which is what sentence detection reads.
std::vector<std::string> tokenize_with_spans(const std::string& text,
                                             std::vector<std::pair<size_t, size_t>>* spans);

struct Document {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  // Byte range of each token's raw whitespace piece within `text`.
  std::vector<std::pair<size_t, size_t>> token_spans;

  static Document make(std::string id, std::string text);

  /// Tokens joined by single spaces.
  std::string normalized_text() const;

  /// True if the raw piece behind token i carries terminal sentence
  /// punctuation ('.', '!' or '?').
  bool token_ends_sentence(size_t i) const;
};

struct Query {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;

  static Query make(std::string id, std::string text);
};

struct Triple {
  std::string query_id;
  std::string doc_id;
  std::string relevant_passage_text;
};

struct Passage {
  size_t index = 0;
  size_t token_start = 0;
  size_t token_end = 0;  // exclusive
  std::string text;      // tokens [token_start, token_end) joined by spaces
};

struct SegmentedDocument {
  std::string doc_id;
  size_t window_size = 0;
  double overlap_ratio = 0.0;
  size_t stride = 0;
  std::vector<std::string> doc_tokens;
  std::vector<Passage> passages;
  // Set by locate_positive() when the gold passage is covered at >= 0.9.
  std::optional<size_t> positive_index;
  double positive_coverage = 0.0;
  bool has_gold = false;

  std::vector<std::string> passage_tokens(size_t index) const;
};

struct CorpusStats {
  double positive_psg_ratio = 0.0;
  double average_psg_num = 0.0;
};

struct PositiveLocation {
  size_t index = 0;
  double coverage = 0.0;
  bool covered = false;  // coverage >= 0.9
};

/// Slices a document into fixed-size windows starting at 0, stride,
/// 2*stride, ...; the final window is truncated at the document end and a
/// window is emitted only if it contributes at least one new token.
/// Throws ValidationError("empty document") and
/// ValidationError("invalid stride") per the module contract.
SegmentedDocument segment(const Document& doc, size_t window_size, double overlap_ratio);

/// Coverage of the gold passage by each window. The gold span is located as
/// the longest contiguous token match within the document (first match on
/// ties); coverage is measured against the full gold length.
std::vector<double> gold_coverage(const SegmentedDocument& seg,
                                  const std::vector<std::string>& gold_tokens);

/// Argmax-coverage window for the gold passage (ties -> lowest index).
/// Updates seg.positive_index only when coverage >= 0.9; the location is
/// returned either way. Throws Error("gold span missing") when no token of
/// the gold passage appears contiguously in the document.
PositiveLocation locate_positive(SegmentedDocument& seg,
                                 const std::vector<std::string>& gold_tokens);

/// positive_psg_ratio is the fraction of gold-bearing documents whose gold
/// passage is covered at >= 0.9; average_psg_num is the mean window count.
CorpusStats corpus_stats(const std::vector<SegmentedDocument>& segmented);

// ----- file formats -----

/// JSONL, one {"id": ..., "text": ...} object per line.
std::vector<Document> load_documents(const std::string& path);
std::vector<Query> load_queries(const std::string& path);

/// TSV: query_id <TAB> doc_id <TAB> relevant_passage_text. Referenced ids
/// must exist in the given corpora.
std::vector<Triple> load_triples(const std::string& path,
                                 const std::unordered_map<std::string, size_t>& query_ids,
                                 const std::unordered_map<std::string, size_t>& doc_ids);

std::string corpus_stats_json(const CorpusStats& stats);

std::unordered_map<std::string, size_t> index_by_id(const std::vector<Document>& docs);
std::unordered_map<std::string, size_t> index_queries_by_id(const std::vector<Query>& queries);

}  // namespace cfrank
