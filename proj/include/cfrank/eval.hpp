// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cfrank {

struct EvalRecord {
  std::string query_id;
  std::vector<std::string> ranked_ids;      // best first, no duplicates
  std::optional<std::string> gold_id;       // nullopt = explicitly no relevant item
};

struct GradedRecord {
  std::string query_id;
  std::vector<std::string> ranked_ids;              // best first, no duplicates
  std::unordered_map<std::string, double> gains;    // absent id = gain 0; gains >= 0
};

/// Mean over records of 1/rank(gold) when the gold id sits in the top k,
/// else 0. A record without a gold id contributes 0.
double mrr_at_k(const std::vector<EvalRecord>& records, size_t k = 10);

/// Mean normalized DCG at k with gain/log2(rank+1); a record whose gains are
/// all zero contributes 0.
double ndcg_at_k(const std::vector<GradedRecord>& records, size_t k = 10);

/// One (query, document) pair ready for passage-level ranking: the
/// attribution values and the positive passage index already resolved for the
/// attribution's overlap handling. A missing positive index marks an
/// uncovered gold span.
struct PassageEvalRecord {
  std::string query_id;
  std::string doc_id;
  std::vector<std::optional<double>> values;
  std::optional<size_t> positive_index;
};

struct PassageEvalResult {
  double mrr = 0.0;
  size_t evaluated = 0;
  size_t skipped = 0;  // uncovered positives, excluded from the mean
};

/// MRR of the positive passage when the document's passages are ranked by
/// attribution value, descending, ties broken toward the lower index. Null
/// value slots never rank. Records without a resolved positive are skipped
/// and counted.
PassageEvalResult passage_extraction_eval(const std::vector<PassageEvalRecord>& records,
                                          size_t k = 10);

/// The even index with the highest gold coverage, for evaluating attributions
/// that value only the even-indexed windows; nullopt when no even window
/// touches the gold span.
std::optional<size_t> remap_positive_even(const std::vector<double>& coverage);

struct RobustnessReport {
  double metric_before = 0.0;
  double metric_after = 0.0;
  double pct_change = 0.0;  // (after - before) / before
};

RobustnessReport robustness_report(double before, double after);

/// Signed one-decimal percentage, e.g. -0.0473 -> "-4.7%"; exact zero after
/// rounding renders "0.0%".
std::string render_pct(double pct_change);

struct ReportRow {
  std::string method;
  std::string resolution;
  std::string metric;
  double value = 0.0;
};

struct AttackRow {
  std::string method;
  std::string resolution;
  std::string metric;
  std::string attack;
  double before = 0.0;
  double after = 0.0;
  double pct_change = 0.0;
};

std::string render_report_tsv(const std::vector<ReportRow>& rows);
std::string render_attack_tsv(const std::vector<AttackRow>& rows);

}  // namespace cfrank
