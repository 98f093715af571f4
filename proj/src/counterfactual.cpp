// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/counterfactual.hpp"

#include <algorithm>
#include <cmath>

#include "cfrank/error.hpp"
#include "cfrank/rng.hpp"

namespace cfrank {

namespace {

std::vector<std::string> document_vocabulary(const std::vector<std::string>& tokens) {
  std::vector<std::string> vocab(tokens);
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  return vocab;
}

// Uniform draw from vocab excluding `current`; vocab is sorted and unique.
std::string draw_distinct_token(const std::vector<std::string>& vocab, const std::string& current,
                                Rng& rng) {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), current);
  bool present = it != vocab.end() && *it == current;
  size_t pool = vocab.size() - (present ? 1 : 0);
  if (pool == 0) throw ValidationError("no replacement token available");
  size_t j = rng.below(pool);
  if (present && j >= static_cast<size_t>(it - vocab.begin())) ++j;
  return vocab[j];
}

size_t ceil_fraction(double ratio, size_t length) {
  return static_cast<size_t>(std::ceil(ratio * static_cast<double>(length)));
}

struct Candidate {
  std::vector<std::string> tokens;
  std::vector<size_t> positions;
};

Candidate sample_candidate(const Document& doc, const Query& query, size_t num_positions,
                           uint64_t seed) {
  Rng rng(seed);
  Candidate cand;
  cand.tokens = doc.tokens;
  cand.positions = rng.sample_distinct(num_positions, doc.tokens.size());
  for (size_t pos : cand.positions) {
    cand.tokens[pos] = query.tokens[rng.below(query.tokens.size())];
  }
  return cand;
}

}  // namespace

ModificationKind modification_kind_from_string(const std::string& name) {
  if (name == "deletion") return ModificationKind::kDeletion;
  if (name == "modification") return ModificationKind::kModification;
  if (name == "replacement") return ModificationKind::kReplacement;
  throw ValidationError("unknown counterfactual kind: " + name);
}

std::string to_string(ModificationKind kind) {
  switch (kind) {
    case ModificationKind::kDeletion: return "deletion";
    case ModificationKind::kModification: return "modification";
    case ModificationKind::kReplacement: return "replacement";
  }
  throw Error("unreachable");
}

std::string CounterfactualDoc::text() const { return join_tokens(tokens); }

CounterfactualDoc construct(const SegmentedDocument& seg, size_t target_index, Modification mode,
                            uint64_t seed) {
  if (target_index >= seg.passages.size()) throw ValidationError("passage index out of range");
  const Passage& target = seg.passages[target_index];

  CounterfactualDoc out;
  out.origin_doc_id = seg.doc_id;
  out.kind = to_string(mode.kind);
  out.target_passage_index = target_index;
  out.seed = seed;
  out.tokens = seg.doc_tokens;

  Rng rng(seed);
  switch (mode.kind) {
    case ModificationKind::kDeletion: {
      out.tokens.erase(out.tokens.begin() + static_cast<ptrdiff_t>(target.token_start),
                       out.tokens.begin() + static_cast<ptrdiff_t>(target.token_end));
      if (out.tokens.empty()) throw ValidationError("document would be empty");
      out.provenance.push_back({Edit::Op::kDeleteSpan, target.token_start, target.token_end});
      break;
    }
    case ModificationKind::kModification: {
      if (mode.word_ratio <= 0.0 || mode.word_ratio > 1.0) {
        throw ValidationError("word_ratio out of range");
      }
      size_t span = target.token_end - target.token_start;
      size_t count = std::max<size_t>(1, ceil_fraction(mode.word_ratio, span));
      std::vector<std::string> vocab = document_vocabulary(seg.doc_tokens);
      std::vector<size_t> offsets = rng.sample_distinct(count, span);
      for (size_t off : offsets) {
        size_t pos = target.token_start + off;
        Edit edit{Edit::Op::kReplaceToken, pos, pos + 1};
        edit.old_token = out.tokens[pos];
        edit.new_token = draw_distinct_token(vocab, out.tokens[pos], rng);
        out.tokens[pos] = edit.new_token;
        out.provenance.push_back(std::move(edit));
      }
      break;
    }
    case ModificationKind::kReplacement: {
      if (seg.passages.size() < 2) throw ValidationError("no replacement source");
      size_t j = rng.below(seg.passages.size() - 1);
      if (j >= target_index) ++j;
      const Passage& source = seg.passages[j];
      std::vector<std::string> replaced;
      replaced.reserve(seg.doc_tokens.size());
      replaced.insert(replaced.end(), out.tokens.begin(),
                      out.tokens.begin() + static_cast<ptrdiff_t>(target.token_start));
      replaced.insert(replaced.end(),
                      seg.doc_tokens.begin() + static_cast<ptrdiff_t>(source.token_start),
                      seg.doc_tokens.begin() + static_cast<ptrdiff_t>(source.token_end));
      replaced.insert(replaced.end(),
                      out.tokens.begin() + static_cast<ptrdiff_t>(target.token_end),
                      out.tokens.end());
      out.tokens = std::move(replaced);
      Edit edit{Edit::Op::kReplaceSpan, target.token_start, target.token_end};
      edit.src_start = source.token_start;
      edit.src_end = source.token_end;
      out.provenance.push_back(std::move(edit));
      break;
    }
  }
  return out;
}

std::vector<TokenRange> split_sentences(const Document& doc, TokenRange span) {
  if (span.end > doc.tokens.size() || span.start >= span.end) {
    throw ValidationError("token span out of range");
  }
  std::vector<TokenRange> sentences;
  size_t run_start = span.start;
  for (size_t i = span.start; i < span.end; ++i) {
    if (doc.token_ends_sentence(i)) {
      sentences.push_back({run_start, i + 1});
      run_start = i + 1;
    }
  }
  if (run_start < span.end) sentences.push_back({run_start, span.end});
  return sentences;
}

CounterfactualDoc partial_counterfactual(const Document& doc, TokenRange positive_span,
                                         uint64_t seed) {
  std::vector<TokenRange> sentences = split_sentences(doc, positive_span);
  CounterfactualDoc out;
  out.origin_doc_id = doc.id;
  out.kind = "partial";
  out.seed = seed;
  out.tokens = doc.tokens;

  if (sentences.size() <= 1) {
    // Single-sentence positives leave nothing partial to remove; the result
    // coincides with the full counterfactual and is flagged as degenerate.
    out.tokens.erase(out.tokens.begin() + static_cast<ptrdiff_t>(positive_span.start),
                     out.tokens.begin() + static_cast<ptrdiff_t>(positive_span.end));
    if (out.tokens.empty()) throw ValidationError("document would be empty");
    out.provenance.push_back(
        {Edit::Op::kDegenerateFull, positive_span.start, positive_span.end});
    return out;
  }

  Rng rng(seed);
  TokenRange victim = sentences[rng.below(sentences.size())];
  out.tokens.erase(out.tokens.begin() + static_cast<ptrdiff_t>(victim.start),
                   out.tokens.begin() + static_cast<ptrdiff_t>(victim.end));
  if (out.tokens.empty()) throw ValidationError("document would be empty");
  out.provenance.push_back({Edit::Op::kRemoveSentence, victim.start, victim.end});
  return out;
}

CounterfactualDoc full_counterfactual(const Document& doc, TokenRange positive_span) {
  if (positive_span.end > doc.tokens.size() || positive_span.start >= positive_span.end) {
    throw ValidationError("token span out of range");
  }
  CounterfactualDoc out;
  out.origin_doc_id = doc.id;
  out.kind = "full";
  out.seed = 0;
  out.tokens = doc.tokens;
  out.tokens.erase(out.tokens.begin() + static_cast<ptrdiff_t>(positive_span.start),
                   out.tokens.begin() + static_cast<ptrdiff_t>(positive_span.end));
  if (out.tokens.empty()) throw ValidationError("document would be empty");
  out.provenance.push_back({Edit::Op::kDeleteSpan, positive_span.start, positive_span.end});
  return out;
}

std::vector<std::vector<std::string>> adversarial_candidates(const Document& doc,
                                                             const Query& query, double epsilon,
                                                             size_t num_candidates,
                                                             uint64_t seed) {
  if (epsilon < 0.0 || epsilon > 1.0) throw ValidationError("epsilon out of range");
  if (num_candidates == 0) throw ValidationError("need at least one candidate");
  if (query.tokens.empty()) throw ValidationError("query has no tokens");
  if (doc.tokens.empty()) throw ValidationError("empty document");
  size_t num_positions = ceil_fraction(epsilon, doc.tokens.size());
  std::vector<std::vector<std::string>> out;
  out.reserve(num_candidates);
  for (size_t k = 0; k < num_candidates; ++k) {
    out.push_back(sample_candidate(doc, query, num_positions, mix_seed(seed, k)).tokens);
  }
  return out;
}

AdversarialDoc adversarial(const Document& doc, const Query& query, const Scorer& scorer,
                           double epsilon, size_t num_candidates, uint64_t seed) {
  if (epsilon < 0.0 || epsilon > 1.0) throw ValidationError("epsilon out of range");
  if (num_candidates == 0) throw ValidationError("need at least one candidate");
  if (query.tokens.empty()) throw ValidationError("query has no tokens");
  if (doc.tokens.empty()) throw ValidationError("empty document");
  size_t num_positions = ceil_fraction(epsilon, doc.tokens.size());

  double base = scorer.score(query, doc.tokens);
  std::vector<std::vector<std::string>> batch;
  std::vector<std::vector<size_t>> positions;
  batch.reserve(num_candidates);
  positions.reserve(num_candidates);
  for (size_t k = 0; k < num_candidates; ++k) {
    Candidate cand = sample_candidate(doc, query, num_positions, mix_seed(seed, k));
    batch.push_back(std::move(cand.tokens));
    positions.push_back(std::move(cand.positions));
  }
  std::vector<double> scores = scorer.score_batch(query, batch);

  size_t best = 0;
  for (size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }

  AdversarialDoc out;
  out.origin_doc_id = doc.id;
  out.epsilon = epsilon;
  out.candidates_examined = num_candidates;
  out.tokens = std::move(batch[best]);
  out.score_gain = scores[best] - base;
  out.replaced_positions = std::move(positions[best]);
  return out;
}

CounterfactualDoc term_spam(const Document& doc, const Query& query, size_t num_positions,
                            uint64_t seed) {
  if (query.tokens.empty()) throw ValidationError("query has no tokens");
  if (num_positions > doc.tokens.size()) {
    throw ValidationError("more positions than document tokens");
  }
  Candidate cand = sample_candidate(doc, query, num_positions, seed);
  CounterfactualDoc out;
  out.origin_doc_id = doc.id;
  out.kind = "ts";
  out.seed = seed;
  out.tokens = std::move(cand.tokens);
  for (size_t pos : cand.positions) {
    Edit edit{Edit::Op::kReplaceToken, pos, pos + 1};
    edit.old_token = doc.tokens[pos];
    edit.new_token = out.tokens[pos];
    out.provenance.push_back(std::move(edit));
  }
  return out;
}

}  // namespace cfrank
