// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cfrank/error.hpp"

namespace cfrank {

std::vector<double> Scorer::score_batch(const Query& query,
                                        const std::vector<std::vector<std::string>>& texts) const {
  std::vector<double> scores;
  scores.reserve(texts.size());
  for (const auto& text : texts) scores.push_back(score(query, text));
  return scores;
}

double Scorer::score_id(const Query&, const std::string& doc_id) const {
  throw ScorerError(name() + " scorer cannot score by id (doc " + doc_id + ")");
}

std::string join_tokens(TokenView tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

size_t RankedList::rank_of(const std::string& doc_id) const {
  const auto it = rank_by_id.find(doc_id);
  if (it == rank_by_id.end()) throw ScorerError("doc id not in ranked list: " + doc_id);
  return it->second;
}

RankedList rank_corpus(const Scorer& scorer, const Query& query,
                       const std::vector<std::string>& candidate_ids) {
  if (candidate_ids.empty()) throw ValidationError("rank_corpus: empty candidate set");
  RankedList list;
  list.query_id = query.id;
  list.entries.reserve(candidate_ids.size());
  for (const std::string& id : candidate_ids) {
    list.entries.emplace_back(id, scorer.score_id(query, id));
  }
  std::sort(list.entries.begin(), list.entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (size_t i = 0; i < list.entries.size(); ++i) {
    list.rank_by_id.emplace(list.entries[i].first, i + 1);
  }
  return list;
}

// ----- BM25 -----

Bm25Scorer::Bm25Scorer(const std::vector<Document>& corpus, Bm25Params params)
    : params_(params), num_docs_(corpus.size()) {
  if (corpus.empty()) throw ValidationError("bm25: empty corpus");
  size_t total_len = 0;
  for (const Document& doc : corpus) {
    total_len += doc.tokens.size();
    std::vector<std::string> uniq = doc.tokens;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (const std::string& term : uniq) ++doc_freq_[term];
    doc_tokens_.emplace(doc.id, doc.tokens);
  }
  avg_doc_len_ = static_cast<double>(total_len) / static_cast<double>(num_docs_);
  if (avg_doc_len_ <= 0.0) throw ValidationError("bm25: corpus has no tokens");
}

double Bm25Scorer::idf(const std::string& term) const {
  const auto it = doc_freq_.find(term);
  const double df = it == doc_freq_.end() ? 0.0 : static_cast<double>(it->second);
  const double n = static_cast<double>(num_docs_);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Scorer::score(const Query& query, TokenView tokens) const {
  if (tokens.empty()) return 0.0;
  const double len_norm = static_cast<double>(tokens.size()) / avg_doc_len_;
  double total = 0.0;
  std::vector<std::string> seen;
  for (const std::string& term : query.tokens) {
    if (std::find(seen.begin(), seen.end(), term) != seen.end()) continue;
    seen.push_back(term);
    size_t tf = 0;
    for (const std::string& tok : tokens) {
      if (tok == term) ++tf;
    }
    if (tf == 0) continue;
    const double tfd = static_cast<double>(tf);
    const double denom = tfd + params_.k1 * (1.0 - params_.b + params_.b * len_norm);
    total += idf(term) * tfd * (params_.k1 + 1.0) / denom;
  }
  return total;
}

double Bm25Scorer::score_id(const Query& query, const std::string& doc_id) const {
  const auto it = doc_tokens_.find(doc_id);
  if (it == doc_tokens_.end()) throw ScorerError("bm25: unknown doc id " + doc_id);
  return score(query, it->second);
}

// ----- embeddings -----

EmbeddingStore::EmbeddingStore(size_t dimension,
                               std::unordered_map<std::string, std::vector<float>> vectors)
    : dimension_(dimension), vectors_(std::move(vectors)) {
  if (dimension_ == 0) throw ValidationError("embedding store: zero dimension");
  for (const auto& [id, vec] : vectors_) {
    if (vec.size() != dimension_) {
      throw ValidationError("dimension mismatch for id " + id);
    }
  }
}

namespace {

constexpr char kEmbeddingMagic[8] = {'C', 'F', 'R', 'K', 'E', 'M', 'B', '1'};

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ValidationError("embedding file truncated reading " + what);
  }
  uint64_t value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) value |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  T out;
  if constexpr (std::is_same_v<T, float>) {
    uint32_t bits = static_cast<uint32_t>(value);
    std::memcpy(&out, &bits, sizeof(float));
  } else {
    out = static_cast<T>(value);
  }
  return out;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  uint64_t bits;
  if constexpr (std::is_same_v<T, float>) {
    uint32_t b32;
    std::memcpy(&b32, &value, sizeof(float));
    bits = b32;
  } else {
    bits = static_cast<uint64_t>(value);
  }
  for (size_t i = 0; i < sizeof(T); ++i) {
    const unsigned char byte = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.put(static_cast<char>(byte));
  }
}

}  // namespace

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open embedding file: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
    throw ValidationError("bad embedding file magic: " + path);
  }
  const auto dimension = read_le<uint32_t>(in, "dimension");
  const auto count = read_le<uint64_t>(in, "record count");
  if (dimension == 0) throw ValidationError("embedding file declares zero dimension: " + path);
  std::unordered_map<std::string, std::vector<float>> vectors;
  vectors.reserve(count);
  for (uint64_t r = 0; r < count; ++r) {
    const auto id_len = read_le<uint16_t>(in, "id length");
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw ValidationError("embedding file truncated reading id");
    std::vector<float> vec(dimension);
    for (uint32_t d = 0; d < dimension; ++d) vec[d] = read_le<float>(in, "vector value");
    if (!vectors.emplace(std::move(id), std::move(vec)).second) {
      throw ValidationError("duplicate embedding id in " + path);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("trailing bytes in embedding file: " + path);
  }
  return EmbeddingStore(dimension, std::move(vectors));
}

void EmbeddingStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write embedding file: " + path);
  out.write(kEmbeddingMagic, 8);
  write_le<uint32_t>(out, static_cast<uint32_t>(dimension_));
  write_le<uint64_t>(out, static_cast<uint64_t>(vectors_.size()));
  // Records sorted by id so the file is byte-stable for a given store.
  std::vector<const std::string*> ids;
  ids.reserve(vectors_.size());
  for (const auto& [id, vec] : vectors_) ids.push_back(&id);
  std::sort(ids.begin(), ids.end(), [](const auto* a, const auto* b) { return *a < *b; });
  for (const std::string* id : ids) {
    if (id->size() > 0xFFFF) throw ValidationError("embedding id too long: " + *id);
    write_le<uint16_t>(out, static_cast<uint16_t>(id->size()));
    out.write(id->data(), static_cast<std::streamsize>(id->size()));
    for (const float v : vectors_.at(*id)) write_le<float>(out, v);
  }
}

const std::vector<float>& EmbeddingStore::vector_for(const std::string& id) const {
  const auto it = vectors_.find(id);
  if (it == vectors_.end()) throw ScorerError("missing embedding: " + id);
  return it->second;
}

Similarity similarity_from_string(const std::string& name) {
  if (name == "cosine") return Similarity::kCosine;
  if (name == "dot") return Similarity::kDot;
  throw ValidationError("unknown similarity: " + name);
}

double dot_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ScorerError("dimension mismatch in similarity");
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return dot;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ScorerError("dimension mismatch in similarity");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;  // empty text encodes to the zero vector
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

EmbeddingResolver::EmbeddingResolver(const EmbeddingStore* store,
                                     std::shared_ptr<const RemoteEncoder> remote)
    : store_(store), remote_(std::move(remote)) {}

std::vector<float> EmbeddingResolver::embed_text(const std::string& key) const {
  if (store_ != nullptr && store_->contains(key)) return store_->vector_for(key);
  if (remote_ != nullptr) {
    auto vectors = remote_->embed({key});
    return std::move(vectors.front());
  }
  throw ScorerError("missing embedding: " + key);
}

EmbeddingScorer::EmbeddingScorer(std::shared_ptr<const EmbeddingStore> query_store,
                                 std::shared_ptr<const EmbeddingStore> doc_store,
                                 Similarity similarity,
                                 std::shared_ptr<const RemoteEncoder> remote)
    : query_store_(std::move(query_store)),
      doc_store_(std::move(doc_store)),
      sim_(similarity),
      remote_(std::move(remote)) {
  if (!query_store_ || !doc_store_) throw ValidationError("embedding scorer: missing store");
  if (query_store_->dimension() != doc_store_->dimension()) {
    throw ValidationError("dimension mismatch between query and document stores");
  }
}

std::vector<float> EmbeddingScorer::query_vector(const Query& query) const {
  return query_store_->vector_for(query.id);
}

double EmbeddingScorer::similarity(std::span<const float> a, std::span<const float> b) const {
  return sim_ == Similarity::kCosine ? cosine_similarity(a, b) : dot_similarity(a, b);
}

double EmbeddingScorer::score(const Query& query, TokenView tokens) const {
  if (tokens.empty()) return 0.0;  // zero-vector convention for v(empty)
  EmbeddingResolver resolver(doc_store_.get(), remote_);
  const std::vector<float> doc_vec = resolver.embed_text(join_tokens(tokens));
  if (doc_vec.size() != doc_store_->dimension()) {
    throw ScorerError("dimension mismatch from remote encoder");
  }
  return similarity(query_vector(query), doc_vec);
}

double EmbeddingScorer::score_id(const Query& query, const std::string& doc_id) const {
  return similarity(query_vector(query), doc_store_->vector_for(doc_id));
}

}  // namespace cfrank
