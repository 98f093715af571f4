// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfrank/corpus.hpp"
#include "cfrank/scoring.hpp"

namespace cfrank {

enum class ModificationKind { kDeletion, kModification, kReplacement };

struct Modification {
  ModificationKind kind = ModificationKind::kDeletion;
  double word_ratio = 0.15;  // modification only; fraction of span tokens replaced

  static Modification deletion() { return {ModificationKind::kDeletion, 0.0}; }
  static Modification modification(double ratio) { return {ModificationKind::kModification, ratio}; }
  static Modification replacement() { return {ModificationKind::kReplacement, 0.0}; }
};

ModificationKind modification_kind_from_string(const std::string& name);
std::string to_string(ModificationKind kind);

/// One recorded edit, in token offsets of the source document.
struct Edit {
  enum class Op { kDeleteSpan, kReplaceToken, kReplaceSpan, kRemoveSentence, kDegenerateFull };
  Op op;
  size_t start = 0;
  size_t end = 0;        // exclusive
  size_t src_start = 0;  // replacement source (kReplaceSpan)
  size_t src_end = 0;
  std::string old_token;  // kReplaceToken
  std::string new_token;
};

struct CounterfactualDoc {
  std::string origin_doc_id;
  std::string kind;  // deletion|modification|replacement|partial|full|adversarial|ts
  std::optional<size_t> target_passage_index;
  uint64_t seed = 0;
  std::vector<std::string> tokens;
  std::vector<Edit> provenance;

  std::string text() const;
};

struct AdversarialDoc {
  std::string origin_doc_id;
  double epsilon = 0.0;
  size_t candidates_examined = 0;
  std::vector<std::string> tokens;
  double score_gain = 0.0;
  std::vector<size_t> replaced_positions;
};

struct TokenRange {
  size_t start = 0;
  size_t end = 0;  // exclusive
  size_t length() const { return end - start; }
};

/// Per-window counterfactual copy: deletion removes the window's tokens,
/// modification replaces ceil(word_ratio * span) of them (at least one) with
/// other tokens drawn from the document's vocabulary, and replacement
/// substitutes the window with another window chosen uniformly.
CounterfactualDoc construct(const SegmentedDocument& seg, size_t target_index, Modification mode,
                            uint64_t seed);

/// Copy of the document with one uniformly chosen sentence of the positive
/// window removed. A single-sentence window degenerates to the full
/// counterfactual, flagged in provenance.
CounterfactualDoc partial_counterfactual(const Document& doc, TokenRange positive_span,
                                         uint64_t seed);

/// Copy of the document with the positive window removed entirely.
CounterfactualDoc full_counterfactual(const Document& doc, TokenRange positive_span);

/// Candidate members of the epsilon-replacement neighborhood: each candidate
/// overwrites ceil(epsilon * len) uniformly chosen positions with uniformly
/// sampled query tokens. Exposed so the selection in adversarial() can be
/// verified independently against the same candidate set.
std::vector<std::vector<std::string>> adversarial_candidates(const Document& doc,
                                                             const Query& query, double epsilon,
                                                             size_t num_candidates, uint64_t seed);

/// Best-of-K search over adversarial_candidates(): returns the candidate
/// maximizing f(q, candidate) - f(q, doc); ties keep the first sampled.
AdversarialDoc adversarial(const Document& doc, const Query& query, const Scorer& scorer,
                           double epsilon, size_t num_candidates, uint64_t seed);

/// Term-spamming attack: overwrites num_positions uniformly chosen token
/// positions with uniformly sampled query tokens.
CounterfactualDoc term_spam(const Document& doc, const Query& query, size_t num_positions,
                            uint64_t seed);

/// Sentence spans of the token range [span.start, span.end): maximal token
/// runs closed by terminal punctuation in the raw text, or by the span end.
std::vector<TokenRange> split_sentences(const Document& doc, TokenRange span);

}  // namespace cfrank
