// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfrank/error.hpp"

namespace cfrank {

namespace {

bool is_ascii_punct(unsigned char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
         (c >= '{' && c <= '~');
}

// Whitespace code points: ASCII controls + space, plus the common Unicode
// space separators and line/paragraph separators.
bool is_space_codepoint(uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Decodes one UTF-8 code point at `i`, advancing `i`. Malformed bytes are
// treated as Latin-1 so tokenization never fails on arbitrary input.
uint32_t decode_utf8(const std::string& s, size_t& i) {
  const auto byte = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char c = byte(i);
  size_t len = 1;
  uint32_t cp = c;
  if ((c & 0x80u) == 0) {
    len = 1;
  } else if ((c & 0xE0u) == 0xC0u) {
    len = 2;
    cp = c & 0x1Fu;
  } else if ((c & 0xF0u) == 0xE0u) {
    len = 3;
    cp = c & 0x0Fu;
  } else if ((c & 0xF8u) == 0xF0u) {
    len = 4;
    cp = c & 0x07u;
  } else {
    ++i;
    return c;
  }
  if (i + len > s.size()) {
    ++i;
    return c;
  }
  for (size_t k = 1; k < len; ++k) {
    if ((byte(i + k) & 0xC0u) != 0x80u) {
      ++i;
      return c;
    }
    cp = (cp << 6) | (byte(i + k) & 0x3Fu);
  }
  i += len;
  return cp;
}

std::string normalize_piece(const std::string& piece) {
  size_t begin = 0;
  size_t end = piece.size();
  while (begin < end && is_ascii_punct(static_cast<unsigned char>(piece[begin]))) ++begin;
  while (end > begin && is_ascii_punct(static_cast<unsigned char>(piece[end - 1]))) --end;
  std::string out;
  out.reserve(end - begin);
  for (size_t k = begin; k < end; ++k) {
    char c = piece[k];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize_with_spans(const std::string& text,
                                             std::vector<std::pair<size_t, size_t>>* spans) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    size_t start = i;
    uint32_t cp = decode_utf8(text, i);
    if (is_space_codepoint(cp)) continue;
    // Extend the piece until the next whitespace code point.
    size_t end = i;
    while (end < text.size()) {
      size_t probe = end;
      cp = decode_utf8(text, probe);
      if (is_space_codepoint(cp)) break;
      end = probe;
    }
    std::string token = normalize_piece(text.substr(start, end - start));
    if (!token.empty()) {
      tokens.push_back(std::move(token));
      if (spans != nullptr) spans->emplace_back(start, end);
    }
    i = end;
  }
  return tokens;
}

std::vector<std::string> tokenize(const std::string& text) {
  return tokenize_with_spans(text, nullptr);
}

Document Document::make(std::string id, std::string text) {
  Document doc;
  doc.id = std::move(id);
  doc.text = std::move(text);
  doc.tokens = tokenize_with_spans(doc.text, &doc.token_spans);
  return doc;
}

std::string Document::normalized_text() const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool Document::token_ends_sentence(size_t i) const {
  if (i >= token_spans.size()) return false;
  const auto [begin, end] = token_spans[i];
  for (size_t k = end; k > begin; --k) {
    const char c = text[k - 1];
    if (c == '.' || c == '!' || c == '?') return true;
    if (!is_ascii_punct(static_cast<unsigned char>(c))) break;
  }
  return false;
}

Query Query::make(std::string id, std::string text) {
  Query q;
  q.id = std::move(id);
  q.text = std::move(text);
  q.tokens = tokenize(q.text);
  return q;
}

std::vector<std::string> SegmentedDocument::passage_tokens(size_t index) const {
  const Passage& p = passages.at(index);
  return {doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_start),
          doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_end)};
}

SegmentedDocument segment(const Document& doc, size_t window_size, double overlap_ratio) {
  if (doc.tokens.empty()) throw ValidationError("empty document: " + doc.id);
  if (window_size < 2) throw ValidationError("invalid stride: window_size must be >= 2");
  if (overlap_ratio < 0.0 || overlap_ratio >= 1.0) {
    throw ValidationError("invalid stride: overlap_ratio must be in [0, 1)");
  }
  const double stride_real = static_cast<double>(window_size) * (1.0 - overlap_ratio);
  const auto stride = static_cast<size_t>(std::llround(stride_real));
  if (stride == 0 || std::abs(stride_real - static_cast<double>(stride)) > 1e-9) {
    throw ValidationError("invalid stride: window_size * (1 - overlap_ratio) must be a positive integer");
  }

  SegmentedDocument seg;
  seg.doc_id = doc.id;
  seg.window_size = window_size;
  seg.overlap_ratio = overlap_ratio;
  seg.stride = stride;
  seg.doc_tokens = doc.tokens;

  const size_t len = doc.tokens.size();
  size_t covered = 0;
  for (size_t start = 0; start < len; start += stride) {
    const size_t end = std::min(start + window_size, len);
    if (end <= covered) break;  // no new token beyond earlier windows
    Passage p;
    p.index = seg.passages.size();
    p.token_start = start;
    p.token_end = end;
    std::string text;
    for (size_t t = start; t < end; ++t) {
      if (t > start) text.push_back(' ');
      text += doc.tokens[t];
    }
    p.text = std::move(text);
    seg.passages.push_back(std::move(p));
    covered = end;
  }
  return seg;
}

namespace {

struct GoldSpan {
  size_t doc_begin = 0;
  size_t doc_end = 0;  // exclusive; length = longest contiguous match
};

// Longest contiguous token match of `gold` inside `doc`, first occurrence on
// ties. Classic O(n*m) rolling-row DP.
GoldSpan locate_gold_span(const std::vector<std::string>& doc,
                          const std::vector<std::string>& gold) {
  const size_t n = doc.size();
  const size_t m = gold.size();
  std::vector<size_t> prev(m + 1, 0);
  std::vector<size_t> cur(m + 1, 0);
  size_t best_len = 0;
  size_t best_end = 0;  // exclusive doc index
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      cur[j] = (doc[i - 1] == gold[j - 1]) ? prev[j - 1] + 1 : 0;
      if (cur[j] > best_len) {
        best_len = cur[j];
        best_end = i;
      }
    }
    std::swap(prev, cur);
  }
  return {best_end - best_len, best_end};
}

}  // namespace

std::vector<double> gold_coverage(const SegmentedDocument& seg,
                                  const std::vector<std::string>& gold_tokens) {
  if (gold_tokens.empty()) throw ValidationError("gold passage is empty");
  const GoldSpan span = locate_gold_span(seg.doc_tokens, gold_tokens);
  if (span.doc_end == span.doc_begin) throw Error("gold span missing");
  std::vector<double> coverage(seg.passages.size(), 0.0);
  for (size_t i = 0; i < seg.passages.size(); ++i) {
    const Passage& p = seg.passages[i];
    const size_t lo = std::max(span.doc_begin, p.token_start);
    const size_t hi = std::min(span.doc_end, p.token_end);
    const size_t overlap = hi > lo ? hi - lo : 0;
    coverage[i] = static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
  }
  return coverage;
}

PositiveLocation locate_positive(SegmentedDocument& seg,
                                 const std::vector<std::string>& gold_tokens) {
  const std::vector<double> coverage = gold_coverage(seg, gold_tokens);
  size_t best = 0;
  for (size_t i = 1; i < coverage.size(); ++i) {
    if (coverage[i] > coverage[best]) best = i;  // ties keep the lowest index
  }
  PositiveLocation loc;
  loc.index = best;
  loc.coverage = coverage[best];
  loc.covered = loc.coverage >= 0.9;
  seg.has_gold = true;
  seg.positive_coverage = loc.coverage;
  seg.positive_index = loc.covered ? std::optional<size_t>(best) : std::nullopt;
  return loc;
}

CorpusStats corpus_stats(const std::vector<SegmentedDocument>& segmented) {
  if (segmented.empty()) throw ValidationError("corpus_stats: empty collection");
  size_t with_gold = 0;
  size_t covered = 0;
  size_t total_passages = 0;
  for (const SegmentedDocument& seg : segmented) {
    total_passages += seg.passages.size();
    if (seg.has_gold) {
      ++with_gold;
      if (seg.positive_index.has_value()) ++covered;
    }
  }
  CorpusStats stats;
  stats.positive_psg_ratio =
      with_gold == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(with_gold);
  stats.average_psg_num =
      static_cast<double>(total_passages) / static_cast<double>(segmented.size());
  return stats;
}

namespace {

nlohmann::json parse_jsonl_line(const std::string& line, const std::string& path, size_t lineno) {
  nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) {
    throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed JSON line");
  }
  return obj;
}

}  // namespace

std::vector<Document> load_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open documents file: " + path);
  std::vector<Document> docs;
  std::unordered_map<std::string, size_t> seen;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj = parse_jsonl_line(line, path, lineno);
    if (!obj.contains("id") || !obj.contains("text")) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": missing id/text");
    }
    Document doc = Document::make(obj["id"].get<std::string>(), obj["text"].get<std::string>());
    if (doc.id.empty()) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": empty document id");
    }
    if (!seen.emplace(doc.id, lineno).second) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": duplicate document id " + doc.id);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open queries file: " + path);
  std::vector<Query> queries;
  std::unordered_map<std::string, size_t> seen;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj = parse_jsonl_line(line, path, lineno);
    if (!obj.contains("id") || !obj.contains("text")) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": missing id/text");
    }
    Query q = Query::make(obj["id"].get<std::string>(), obj["text"].get<std::string>());
    if (q.id.empty()) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": empty query id");
    }
    if (!seen.emplace(q.id, lineno).second) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": duplicate query id " + q.id);
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

std::vector<Triple> load_triples(const std::string& path,
                                 const std::unordered_map<std::string, size_t>& query_ids,
                                 const std::unordered_map<std::string, size_t>& doc_ids) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open triples file: " + path);
  std::vector<Triple> triples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab1 = line.find('\t');
    const size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    Triple t;
    t.query_id = line.substr(0, tab1);
    t.doc_id = line.substr(tab1 + 1, tab2 - tab1 - 1);
    t.relevant_passage_text = line.substr(tab2 + 1);
    if (!query_ids.count(t.query_id)) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown query id " + t.query_id);
    }
    if (!doc_ids.count(t.doc_id)) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown doc id " + t.doc_id);
    }
    triples.push_back(std::move(t));
  }
  return triples;
}

std::string corpus_stats_json(const CorpusStats& stats) {
  nlohmann::json obj;
  obj["positive_psg_ratio"] = stats.positive_psg_ratio;
  obj["average_psg_num"] = stats.average_psg_num;
  return obj.dump();
}

std::unordered_map<std::string, size_t> index_by_id(const std::vector<Document>& docs) {
  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < docs.size(); ++i) index.emplace(docs[i].id, i);
  return index;
}

std::unordered_map<std::string, size_t> index_queries_by_id(const std::vector<Query>& queries) {
  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < queries.size(); ++i) index.emplace(queries[i].id, i);
  return index;
}

}  // namespace cfrank
