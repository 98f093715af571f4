// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfrank/corpus.hpp"
#include "cfrank/counterfactual.hpp"
#include "cfrank/scoring.hpp"

namespace cfrank {

enum class AttributionMethod { kDeltaRank, kDeltaRel, kShapley };
enum class OverlapResolution { kNone, kNonOverlap, kMerge };
enum class ShapleyMode { kAuto, kExact, kMc, kExhaustive };

AttributionMethod attribution_method_from_string(const std::string& name);
OverlapResolution overlap_resolution_from_string(const std::string& name);
ShapleyMode shapley_mode_from_string(const std::string& name);
std::string to_string(AttributionMethod method);
std::string to_string(OverlapResolution resolution);

struct AttributionResult {
  std::string query_id;
  std::string doc_id;
  std::string method;  // delta_rank | delta_rel | shapley_exact | shapley_mc
  std::string resolution = "none";
  std::vector<std::optional<double>> values;  // one slot per passage
  std::optional<size_t> key_index;
  size_t coalition_evals = 0;  // scorer evaluations performed
};

/// Characteristic function over a fixed member list of passages. A coalition
/// is a bitmask over members; its document is the members' token spans
/// concatenated in original document order, so excluded members are deleted.
/// Values are memoized; evaluations() counts scorer calls, not lookups.
class CoalitionValue {
 public:
  CoalitionValue(const Scorer& scorer, const Query& query, const SegmentedDocument& seg,
                 std::vector<size_t> members);

  size_t size() const { return members_.size(); }
  const std::vector<size_t>& members() const { return members_; }
  double value(uint64_t mask);
  size_t evaluations() const;

 private:
  const Scorer& scorer_;
  const Query& query_;
  const SegmentedDocument& seg_;
  std::vector<size_t> members_;
  mutable std::mutex mutex_;
  std::unordered_map<uint64_t, double> cache_;
  size_t evaluations_ = 0;
};

/// A query's candidate pool with per-document scores, including the document
/// under attribution. rank_of(id, score) is the 1-based position the document
/// would take if rescored to `score` while every other pool member keeps its
/// score; ordering is score descending, id ascending on ties.
class RankContext {
 public:
  explicit RankContext(std::vector<std::pair<std::string, double>> pool);
  size_t rank_of(const std::string& id, double score) const;
  size_t pool_size() const { return by_score_.size(); }
  bool contains(const std::string& id) const { return scores_.count(id) != 0; }

 private:
  std::vector<std::pair<double, std::string>> by_score_;  // score desc, id asc
  std::unordered_map<std::string, double> scores_;
};

struct ShapleyOptions {
  ShapleyMode mode = ShapleyMode::kAuto;
  size_t num_permutations = 5000;
  uint64_t seed = 42;
};

/// Exact Shapley values by subset enumeration; 2^n coalition evaluations.
std::vector<double> shapley_exact(CoalitionValue& v);

/// Monte Carlo Shapley estimate from num_permutations sampled permutations,
/// or from every permutation when exhaustive is set. Each permutation
/// telescopes, so the estimate keeps the efficiency identity exactly.
std::vector<double> shapley_mc(CoalitionValue& v, size_t num_permutations, uint64_t seed,
                               bool exhaustive = false);

/// Attribution by rank change: value[i] is the rank the document takes in the
/// pool after passage i is counterfactually edited, minus its intact rank.
/// Positive means the passage was holding the rank up. The seed feeds the
/// modification and replacement modes; deletion ignores it.
AttributionResult delta_rank(const Scorer& scorer, const Query& query,
                             const SegmentedDocument& seg, const RankContext& pool,
                             Modification mode = Modification::deletion(), uint64_t seed = 42);

/// Attribution by score change: value[i] is score(d) minus the score of the
/// document with passage i counterfactually edited.
AttributionResult delta_rel(const Scorer& scorer, const Query& query,
                            const SegmentedDocument& seg,
                            Modification mode = Modification::deletion(), uint64_t seed = 42);

/// Shapley attribution over the passages. Overlapping segmentations need a
/// resolution: non_overlap attributes the even-indexed windows only (these
/// are disjoint at overlap <= 50%) and leaves odd slots null; merge
/// attributes the even and odd groups independently, interleaves them, and
/// smooths with a window-3 truncated moving average.
AttributionResult shapley(const Scorer& scorer, const Query& query, const SegmentedDocument& seg,
                          OverlapResolution resolution, const ShapleyOptions& opts);

/// Index of the largest non-null value, lowest index on ties; nullopt when
/// every slot is null.
std::optional<size_t> key_passage(const std::vector<std::optional<double>>& values);

/// Truncated moving average of width 3: each output is the mean of the
/// defined neighbors among {i-1, i, i+1}.
std::vector<double> moving_average_3(const std::vector<double>& values);

struct AttributionOptions {
  AttributionMethod method = AttributionMethod::kShapley;
  OverlapResolution resolution = OverlapResolution::kNonOverlap;
  ShapleyOptions shapley;
  Modification mode = Modification::deletion();  // delta methods only
  uint64_t seed = 42;
};

/// Driver used by the command layer; pool may be null except for delta_rank.
AttributionResult attribute(const Scorer& scorer, const Query& query,
                            const SegmentedDocument& seg, const RankContext* pool,
                            const AttributionOptions& opts);

}  // namespace cfrank
