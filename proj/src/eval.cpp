// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "cfrank/error.hpp"

namespace cfrank {

namespace {

void require_no_duplicates(const std::vector<std::string>& ids, const std::string& query_id) {
  std::unordered_set<std::string> seen;
  for (const std::string& id : ids) {
    if (!seen.insert(id).second) {
      throw ValidationError("duplicate id in ranking for query " + query_id + ": " + id);
    }
  }
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double mrr_at_k(const std::vector<EvalRecord>& records, size_t k) {
  if (records.empty()) throw ValidationError("no evaluation records");
  if (k == 0) throw ValidationError("k must be positive");
  double sum = 0.0;
  for (const EvalRecord& rec : records) {
    require_no_duplicates(rec.ranked_ids, rec.query_id);
    if (!rec.gold_id) continue;
    size_t limit = std::min(k, rec.ranked_ids.size());
    for (size_t r = 0; r < limit; ++r) {
      if (rec.ranked_ids[r] == *rec.gold_id) {
        sum += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
  }
  return sum / static_cast<double>(records.size());
}

double ndcg_at_k(const std::vector<GradedRecord>& records, size_t k) {
  if (records.empty()) throw ValidationError("no evaluation records");
  if (k == 0) throw ValidationError("k must be positive");
  double sum = 0.0;
  for (const GradedRecord& rec : records) {
    require_no_duplicates(rec.ranked_ids, rec.query_id);
    std::vector<double> gains;
    gains.reserve(rec.gains.size());
    for (const auto& [id, gain] : rec.gains) {
      if (gain < 0.0) {
        throw ValidationError("negative gain for query " + rec.query_id + ": " + id);
      }
      gains.push_back(gain);
    }
    double dcg = 0.0;
    size_t limit = std::min(k, rec.ranked_ids.size());
    for (size_t r = 0; r < limit; ++r) {
      auto it = rec.gains.find(rec.ranked_ids[r]);
      if (it != rec.gains.end()) dcg += it->second / std::log2(static_cast<double>(r + 2));
    }
    std::sort(gains.begin(), gains.end(), std::greater<double>());
    double idcg = 0.0;
    for (size_t r = 0; r < std::min(k, gains.size()); ++r) {
      idcg += gains[r] / std::log2(static_cast<double>(r + 2));
    }
    if (idcg > 0.0) sum += dcg / idcg;
  }
  return sum / static_cast<double>(records.size());
}

PassageEvalResult passage_extraction_eval(const std::vector<PassageEvalRecord>& records,
                                          size_t k) {
  if (k == 0) throw ValidationError("k must be positive");
  PassageEvalResult out;
  double sum = 0.0;
  for (const PassageEvalRecord& rec : records) {
    if (!rec.positive_index || *rec.positive_index >= rec.values.size() ||
        !rec.values[*rec.positive_index]) {
      ++out.skipped;
      continue;
    }
    size_t pos = *rec.positive_index;
    double pos_value = *rec.values[pos];
    size_t rank = 1;
    for (size_t j = 0; j < rec.values.size(); ++j) {
      if (j == pos || !rec.values[j]) continue;
      double v = *rec.values[j];
      if (v > pos_value || (v == pos_value && j < pos)) ++rank;
    }
    if (rank <= k) sum += 1.0 / static_cast<double>(rank);
    ++out.evaluated;
  }
  if (out.evaluated > 0) out.mrr = sum / static_cast<double>(out.evaluated);
  return out;
}

std::optional<size_t> remap_positive_even(const std::vector<double>& coverage) {
  std::optional<size_t> best;
  for (size_t i = 0; i < coverage.size(); i += 2) {
    if (coverage[i] <= 0.0) continue;
    if (!best || coverage[i] > coverage[*best]) best = i;
  }
  return best;
}

RobustnessReport robustness_report(double before, double after) {
  if (!(before > 0.0)) throw ValidationError("baseline metric must be positive");
  if (!std::isfinite(after) || after < 0.0) throw ValidationError("degraded metric out of range");
  RobustnessReport out;
  out.metric_before = before;
  out.metric_after = after;
  out.pct_change = (after - before) / before;
  return out;
}

std::string render_pct(double pct_change) {
  double pct = pct_change * 100.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", pct);
  std::string body(buf);
  if (body == "-0.0" || body == "0.0") return "0.0%";
  if (pct > 0.0) return "+" + body + "%";
  return body + "%";
}

std::string render_report_tsv(const std::vector<ReportRow>& rows) {
  std::string out = "method\tresolution\tmetric\tvalue\n";
  for (const ReportRow& row : rows) {
    out += row.method;
    out += '\t';
    out += row.resolution;
    out += '\t';
    out += row.metric;
    out += '\t';
    out += format_value(row.value);
    out += '\n';
  }
  return out;
}

std::string render_attack_tsv(const std::vector<AttackRow>& rows) {
  std::string out = "method\tresolution\tmetric\tattack\tbefore\tafter\tpct_change\n";
  for (const AttackRow& row : rows) {
    out += row.method;
    out += '\t';
    out += row.resolution;
    out += '\t';
    out += row.metric;
    out += '\t';
    out += row.attack;
    out += '\t';
    out += format_value(row.before);
    out += '\t';
    out += format_value(row.after);
    out += '\t';
    out += render_pct(row.pct_change);
    out += '\n';
  }
  return out;
}

}  // namespace cfrank
