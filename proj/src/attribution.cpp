// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "cfrank/error.hpp"
#include "cfrank/rng.hpp"

namespace cfrank {

namespace {

constexpr size_t kMaxExactMembers = 12;
constexpr size_t kMaxExhaustiveMembers = 10;
constexpr size_t kMaxMaskMembers = 63;

double factorial(size_t n) {
  double out = 1.0;
  for (size_t k = 2; k <= n; ++k) out *= static_cast<double>(k);
  return out;
}

std::vector<size_t> parity_members(const SegmentedDocument& seg, size_t parity) {
  std::vector<size_t> members;
  for (size_t i = parity; i < seg.passages.size(); i += 2) members.push_back(i);
  return members;
}

std::vector<size_t> all_members(const SegmentedDocument& seg) {
  std::vector<size_t> members(seg.passages.size());
  for (size_t i = 0; i < members.size(); ++i) members[i] = i;
  return members;
}

// Document tokens after applying the per-passage counterfactual. Deletion may
// empty the document; the scorer then sees the empty coalition.
std::vector<std::string> edited_tokens(const SegmentedDocument& seg, size_t index,
                                       Modification mode, uint64_t seed) {
  if (mode.kind == ModificationKind::kDeletion) {
    const Passage& p = seg.passages[index];
    std::vector<std::string> out;
    out.reserve(seg.doc_tokens.size() - (p.token_end - p.token_start));
    out.insert(out.end(), seg.doc_tokens.begin(),
               seg.doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_start));
    out.insert(out.end(), seg.doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_end),
               seg.doc_tokens.end());
    return out;
  }
  return construct(seg, index, mode, seed).tokens;
}

struct DeltaScores {
  double intact = 0.0;
  std::vector<double> edited;  // one per passage
};

DeltaScores delta_scores(const Scorer& scorer, const Query& query, const SegmentedDocument& seg,
                         Modification mode, uint64_t seed) {
  std::vector<std::vector<std::string>> texts;
  texts.reserve(seg.passages.size() + 1);
  texts.push_back(seg.doc_tokens);
  for (size_t i = 0; i < seg.passages.size(); ++i) {
    texts.push_back(edited_tokens(seg, i, mode, mix_seed(seed, i)));
  }
  std::vector<double> scores = scorer.score_batch(query, texts);

  DeltaScores out;
  out.intact = scores[0];
  out.edited.assign(scores.begin() + 1, scores.end());
  return out;
}

std::vector<double> shapley_for_members(const Scorer& scorer, const Query& query,
                                        const SegmentedDocument& seg,
                                        std::vector<size_t> members, ShapleyMode mode,
                                        size_t num_permutations, uint64_t seed, size_t* evals) {
  CoalitionValue v(scorer, query, seg, std::move(members));
  std::vector<double> phi;
  switch (mode) {
    case ShapleyMode::kExact: phi = shapley_exact(v); break;
    case ShapleyMode::kMc: phi = shapley_mc(v, num_permutations, seed); break;
    case ShapleyMode::kExhaustive: phi = shapley_mc(v, num_permutations, seed, true); break;
    case ShapleyMode::kAuto: throw Error("unreachable");
  }
  *evals += v.evaluations();
  return phi;
}

}  // namespace

AttributionMethod attribution_method_from_string(const std::string& name) {
  if (name == "delta_rank") return AttributionMethod::kDeltaRank;
  if (name == "delta_rel") return AttributionMethod::kDeltaRel;
  if (name == "shapley") return AttributionMethod::kShapley;
  throw ValidationError("unknown attribution method: " + name);
}

OverlapResolution overlap_resolution_from_string(const std::string& name) {
  if (name == "none") return OverlapResolution::kNone;
  if (name == "non_overlap") return OverlapResolution::kNonOverlap;
  if (name == "merge") return OverlapResolution::kMerge;
  throw ValidationError("unknown overlap resolution: " + name);
}

ShapleyMode shapley_mode_from_string(const std::string& name) {
  if (name == "auto") return ShapleyMode::kAuto;
  if (name == "exact") return ShapleyMode::kExact;
  if (name == "mc") return ShapleyMode::kMc;
  if (name == "exhaustive") return ShapleyMode::kExhaustive;
  throw ValidationError("unknown shapley mode: " + name);
}

std::string to_string(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::kDeltaRank: return "delta_rank";
    case AttributionMethod::kDeltaRel: return "delta_rel";
    case AttributionMethod::kShapley: return "shapley";
  }
  throw Error("unreachable");
}

std::string to_string(OverlapResolution resolution) {
  switch (resolution) {
    case OverlapResolution::kNone: return "none";
    case OverlapResolution::kNonOverlap: return "non_overlap";
    case OverlapResolution::kMerge: return "merge";
  }
  throw Error("unreachable");
}

CoalitionValue::CoalitionValue(const Scorer& scorer, const Query& query,
                               const SegmentedDocument& seg, std::vector<size_t> members)
    : scorer_(scorer), query_(query), seg_(seg), members_(std::move(members)) {
  if (members_.size() > kMaxMaskMembers) {
    throw ValidationError("too many passages for coalition masks; segment with larger windows");
  }
  for (size_t m : members_) {
    if (m >= seg.passages.size()) throw ValidationError("coalition member out of range");
  }
}

double CoalitionValue::value(uint64_t mask) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = cache_.find(mask);
  if (it != cache_.end()) return it->second;

  std::vector<std::string> tokens;
  for (size_t i = 0; i < members_.size(); ++i) {
    if ((mask >> i) & 1u) {
      const Passage& p = seg_.passages[members_[i]];
      tokens.insert(tokens.end(),
                    seg_.doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_start),
                    seg_.doc_tokens.begin() + static_cast<ptrdiff_t>(p.token_end));
    }
  }
  double score = scorer_.score(query_, tokens);
  ++evaluations_;
  cache_.emplace(mask, score);
  return score;
}

size_t CoalitionValue::evaluations() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return evaluations_;
}

RankContext::RankContext(std::vector<std::pair<std::string, double>> pool) {
  by_score_.reserve(pool.size());
  for (auto& [id, score] : pool) {
    if (!scores_.emplace(id, score).second) throw ValidationError("duplicate id in pool: " + id);
    by_score_.emplace_back(score, std::move(id));
  }
  std::sort(by_score_.begin(), by_score_.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
}

namespace {

bool ranked_ahead(const std::pair<double, std::string>& e,
                  const std::pair<double, std::string>& key) {
  if (e.first != key.first) return e.first > key.first;
  return e.second < key.second;
}

}  // namespace

size_t RankContext::rank_of(const std::string& id, double score) const {
  std::pair<double, std::string> key(score, id);
  auto it = std::lower_bound(by_score_.begin(), by_score_.end(), key, ranked_ahead);
  size_t ahead = static_cast<size_t>(it - by_score_.begin());
  auto self = scores_.find(id);
  if (self != scores_.end() && ranked_ahead({self->second, id}, key)) --ahead;
  return ahead + 1;
}

std::vector<double> shapley_exact(CoalitionValue& v) {
  size_t n = v.size();
  if (n == 0) throw ValidationError("no passages to attribute");
  if (n > kMaxExactMembers) {
    throw ValidationError("exact enumeration supports at most 12 passages; use shapley_mc");
  }
  std::vector<double> weight(n);
  double n_fact = factorial(n);
  for (size_t s = 0; s < n; ++s) weight[s] = factorial(s) * factorial(n - 1 - s) / n_fact;

  std::vector<double> phi(n, 0.0);
  uint64_t full = uint64_t(1) << n;
  for (uint64_t mask = 0; mask < full; ++mask) {
    double base = v.value(mask);
    double w = weight[static_cast<size_t>(std::popcount(mask))];
    for (size_t i = 0; i < n; ++i) {
      uint64_t bit = uint64_t(1) << i;
      if (mask & bit) continue;
      phi[i] += w * (v.value(mask | bit) - base);
    }
  }
  return phi;
}

std::vector<double> shapley_mc(CoalitionValue& v, size_t num_permutations, uint64_t seed,
                               bool exhaustive) {
  size_t n = v.size();
  if (n == 0) throw ValidationError("no passages to attribute");
  std::vector<double> phi(n, 0.0);
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;

  auto accumulate = [&](const std::vector<size_t>& order) {
    uint64_t mask = 0;
    double prev = v.value(0);
    for (size_t i : order) {
      mask |= uint64_t(1) << i;
      double cur = v.value(mask);
      phi[i] += cur - prev;
      prev = cur;
    }
  };

  size_t total = 0;
  if (exhaustive) {
    if (n > kMaxExhaustiveMembers) {
      throw ValidationError("exhaustive permutations support at most 10 passages");
    }
    do {
      accumulate(perm);
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    if (num_permutations == 0) throw ValidationError("need at least one permutation");
    Rng rng(seed);
    for (size_t t = 0; t < num_permutations; ++t) {
      rng.shuffle(perm);
      accumulate(perm);
    }
    total = num_permutations;
  }
  for (double& p : phi) p /= static_cast<double>(total);
  return phi;
}

AttributionResult delta_rel(const Scorer& scorer, const Query& query,
                            const SegmentedDocument& seg, Modification mode, uint64_t seed) {
  size_t n = seg.passages.size();
  DeltaScores scores = delta_scores(scorer, query, seg, mode, seed);

  AttributionResult out;
  out.query_id = query.id;
  out.doc_id = seg.doc_id;
  out.method = "delta_rel";
  out.values.resize(n);
  for (size_t i = 0; i < n; ++i) out.values[i] = scores.intact - scores.edited[i];
  out.key_index = key_passage(out.values);
  out.coalition_evals = n + 1;
  return out;
}

AttributionResult delta_rank(const Scorer& scorer, const Query& query,
                             const SegmentedDocument& seg, const RankContext& pool,
                             Modification mode, uint64_t seed) {
  if (!pool.contains(seg.doc_id)) {
    throw ValidationError("pool must contain the attributed document");
  }
  if (pool.pool_size() < 2) throw ValidationError("pool needs at least two documents");
  size_t n = seg.passages.size();
  DeltaScores scores = delta_scores(scorer, query, seg, mode, seed);

  size_t rank_before = pool.rank_of(seg.doc_id, scores.intact);
  AttributionResult out;
  out.query_id = query.id;
  out.doc_id = seg.doc_id;
  out.method = "delta_rank";
  out.values.resize(n);
  for (size_t i = 0; i < n; ++i) {
    size_t rank_after = pool.rank_of(seg.doc_id, scores.edited[i]);
    out.values[i] = static_cast<double>(rank_after) - static_cast<double>(rank_before);
  }
  out.key_index = key_passage(out.values);
  out.coalition_evals = n + 1;
  return out;
}

std::vector<double> moving_average_3(const std::vector<double>& values) {
  std::vector<double> out(values.size(), 0.0);
  for (size_t i = 0; i < values.size(); ++i) {
    size_t lo = i == 0 ? 0 : i - 1;
    size_t hi = std::min(values.size() - 1, i + 1);
    double sum = 0.0;
    for (size_t j = lo; j <= hi; ++j) sum += values[j];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

AttributionResult shapley(const Scorer& scorer, const Query& query, const SegmentedDocument& seg,
                          OverlapResolution resolution, const ShapleyOptions& opts) {
  size_t n = seg.passages.size();
  if (resolution != OverlapResolution::kNone && seg.overlap_ratio > 0.5) {
    throw ValidationError("parity groups overlap; resolutions need overlap <= 50%");
  }

  // The variant is fixed per document so the reported method is unambiguous:
  // auto picks exact enumeration when every group fits, sampling otherwise.
  size_t largest_group = n;
  if (resolution != OverlapResolution::kNone) {
    largest_group = parity_members(seg, 0).size();
  }
  ShapleyMode mode = opts.mode;
  if (mode == ShapleyMode::kAuto) {
    mode = largest_group <= kMaxExactMembers ? ShapleyMode::kExact : ShapleyMode::kMc;
  }

  AttributionResult out;
  out.query_id = query.id;
  out.doc_id = seg.doc_id;
  out.method = mode == ShapleyMode::kExact ? "shapley_exact" : "shapley_mc";
  out.resolution = to_string(resolution);
  out.values.resize(n);

  switch (resolution) {
    case OverlapResolution::kNone: {
      if (seg.overlap_ratio > 0.0) {
        throw ValidationError("overlapping passages need an overlap resolution");
      }
      std::vector<double> phi =
          shapley_for_members(scorer, query, seg, all_members(seg), mode, opts.num_permutations,
                              opts.seed, &out.coalition_evals);
      for (size_t i = 0; i < n; ++i) out.values[i] = phi[i];
      break;
    }
    case OverlapResolution::kNonOverlap: {
      std::vector<size_t> members = parity_members(seg, 0);
      std::vector<double> phi = shapley_for_members(scorer, query, seg, members, mode,
                                                    opts.num_permutations, opts.seed,
                                                    &out.coalition_evals);
      for (size_t i = 0; i < members.size(); ++i) out.values[members[i]] = phi[i];
      break;
    }
    case OverlapResolution::kMerge: {
      std::vector<double> interleaved(n, 0.0);
      for (size_t parity = 0; parity < 2; ++parity) {
        std::vector<size_t> members = parity_members(seg, parity);
        if (members.empty()) continue;
        std::vector<double> phi = shapley_for_members(scorer, query, seg, members, mode,
                                                      opts.num_permutations,
                                                      mix_seed(opts.seed, parity),
                                                      &out.coalition_evals);
        for (size_t i = 0; i < members.size(); ++i) interleaved[members[i]] = phi[i];
      }
      std::vector<double> smoothed = moving_average_3(interleaved);
      for (size_t i = 0; i < n; ++i) out.values[i] = smoothed[i];
      break;
    }
  }
  out.key_index = key_passage(out.values);
  return out;
}

std::optional<size_t> key_passage(const std::vector<std::optional<double>>& values) {
  std::optional<size_t> best;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    if (!best || *values[i] > *values[*best]) best = i;
  }
  return best;
}

AttributionResult attribute(const Scorer& scorer, const Query& query,
                            const SegmentedDocument& seg, const RankContext* pool,
                            const AttributionOptions& opts) {
  switch (opts.method) {
    case AttributionMethod::kDeltaRank:
      if (pool == nullptr) throw ValidationError("rank attribution needs a ranking pool");
      return delta_rank(scorer, query, seg, *pool, opts.mode, opts.seed);
    case AttributionMethod::kDeltaRel:
      return delta_rel(scorer, query, seg, opts.mode, opts.seed);
    case AttributionMethod::kShapley:
      return shapley(scorer, query, seg, opts.resolution, opts.shapley);
  }
  throw Error("unreachable");
}

}  // namespace cfrank
