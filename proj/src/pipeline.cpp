// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "cfrank/error.hpp"
#include "cfrank/eval.hpp"
#include "cfrank/parallel.hpp"
#include "cfrank/rng.hpp"

namespace cfrank {
namespace {

void log_line(const std::string& message) { std::cerr << "[cfrank] " << message << '\n'; }

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw Error("short write: " + path.string());
}

std::filesystem::path out_path(const PipelineConfig& config, const std::string& name) {
  std::filesystem::create_directories(config.out_dir);
  return std::filesystem::path(config.out_dir) / name;
}

struct LoadedCorpus {
  std::vector<Document> documents;
  std::vector<Query> queries;
  std::vector<Triple> triples;
  std::unordered_map<std::string, size_t> doc_index;
  std::unordered_map<std::string, size_t> query_index;
};

LoadedCorpus load_corpus(const PipelineConfig& config, bool need_triples) {
  if (config.documents_path.empty()) throw ValidationError("corpus.documents is required");
  LoadedCorpus corpus;
  corpus.documents = load_documents(config.documents_path);
  corpus.doc_index = index_by_id(corpus.documents);
  if (!config.queries_path.empty()) {
    corpus.queries = load_queries(config.queries_path);
    corpus.query_index = index_queries_by_id(corpus.queries);
  }
  if (!config.triples_path.empty()) {
    if (config.queries_path.empty()) {
      throw ValidationError("corpus.queries is required alongside corpus.triples");
    }
    corpus.triples = load_triples(config.triples_path, corpus.query_index, corpus.doc_index);
  }
  if (need_triples && corpus.triples.empty()) {
    throw ValidationError("corpus.triples must provide at least one (query, document) pair");
  }
  return corpus;
}

std::vector<SegmentedDocument> segment_documents(const LoadedCorpus& corpus,
                                                 const PipelineConfig& config) {
  return parallel_map<SegmentedDocument>(corpus.documents.size(), config.jobs, [&](size_t i) {
    return segment(corpus.documents[i], config.window_size, config.overlap_ratio);
  });
}

// Marks the gold passage on a copy of the base segmentation. A gold span
// that cannot be located leaves the document flagged but uncovered; callers
// skip such records instead of failing the run.
SegmentedDocument seg_with_gold(const SegmentedDocument& base,
                                const std::vector<std::string>& gold_tokens) {
  SegmentedDocument seg = base;
  try {
    locate_positive(seg, gold_tokens);
  } catch (const Error&) {
    seg.has_gold = true;
    seg.positive_index.reset();
    seg.positive_coverage = 0.0;
  }
  return seg;
}

Modification modification_from_config(const PipelineConfig& config) {
  switch (modification_kind_from_string(config.counterfactual_mode)) {
    case ModificationKind::kDeletion: return Modification::deletion();
    case ModificationKind::kModification: return Modification::modification(config.word_ratio);
    case ModificationKind::kReplacement: return Modification::replacement();
  }
  throw Error("unreachable");
}

nlohmann::json edit_json(const Edit& edit) {
  nlohmann::json j;
  switch (edit.op) {
    case Edit::Op::kDeleteSpan: j["op"] = "delete_span"; break;
    case Edit::Op::kReplaceToken: j["op"] = "replace_token"; break;
    case Edit::Op::kReplaceSpan: j["op"] = "replace_span"; break;
    case Edit::Op::kRemoveSentence: j["op"] = "remove_sentence"; break;
    case Edit::Op::kDegenerateFull: j["op"] = "degenerate_full"; break;
  }
  j["start"] = edit.start;
  j["end"] = edit.end;
  if (edit.op == Edit::Op::kReplaceSpan) {
    j["src_start"] = edit.src_start;
    j["src_end"] = edit.src_end;
  }
  if (edit.op == Edit::Op::kReplaceToken) {
    j["old"] = edit.old_token;
    j["new"] = edit.new_token;
  }
  return j;
}

nlohmann::json segment_json(const SegmentedDocument& seg,
                            const std::optional<std::string>& query_id) {
  nlohmann::json j;
  j["doc_id"] = seg.doc_id;
  j["query_id"] = query_id ? nlohmann::json(*query_id) : nlohmann::json();
  j["window_size"] = seg.window_size;
  j["overlap_ratio"] = seg.overlap_ratio;
  j["stride"] = seg.stride;
  j["has_gold"] = seg.has_gold;
  j["positive_index"] =
      seg.positive_index ? nlohmann::json(*seg.positive_index) : nlohmann::json();
  j["positive_coverage"] = seg.positive_coverage;
  nlohmann::json passages = nlohmann::json::array();
  for (const Passage& p : seg.passages) {
    nlohmann::json pj;
    pj["index"] = p.index;
    pj["token_start"] = p.token_start;
    pj["token_end"] = p.token_end;
    pj["text"] = p.text;
    passages.push_back(std::move(pj));
  }
  j["passages"] = std::move(passages);
  return j;
}

// Per-command segmentation view: one record per triple in input order, then
// one per document no triple references. Stats are computed over this list,
// so a document relevant to several queries counts once per pair.
struct SegmentRecords {
  std::vector<SegmentedDocument> segs;
  std::vector<std::optional<std::string>> query_ids;
};

SegmentRecords build_segment_records(const LoadedCorpus& corpus,
                                     const std::vector<SegmentedDocument>& base,
                                     const PipelineConfig& config) {
  SegmentRecords out;
  std::vector<SegmentedDocument> per_triple =
      parallel_map<SegmentedDocument>(corpus.triples.size(), config.jobs, [&](size_t i) {
        const Triple& t = corpus.triples[i];
        return seg_with_gold(base[corpus.doc_index.at(t.doc_id)],
                             tokenize(t.relevant_passage_text));
      });
  std::vector<char> referenced(corpus.documents.size(), 0);
  for (size_t i = 0; i < corpus.triples.size(); ++i) {
    referenced[corpus.doc_index.at(corpus.triples[i].doc_id)] = 1;
    out.segs.push_back(std::move(per_triple[i]));
    out.query_ids.emplace_back(corpus.triples[i].query_id);
  }
  for (size_t d = 0; d < corpus.documents.size(); ++d) {
    if (referenced[d]) continue;
    out.segs.push_back(base[d]);
    out.query_ids.emplace_back(std::nullopt);
  }
  return out;
}

// Full-corpus ranking for one query; the entries feed both rank-change pools
// and document-level metrics.
struct QueryRanking {
  std::vector<std::string> ranked_ids;  // best first
  std::vector<std::pair<std::string, double>> entries;
  std::unordered_map<std::string, double> score_by_id;
};

std::unordered_map<std::string, QueryRanking> rank_queries(const Scorer& scorer,
                                                           const LoadedCorpus& corpus,
                                                           const PipelineConfig& config) {
  std::vector<std::string> query_ids;
  std::unordered_set<std::string> seen;
  for (const Triple& t : corpus.triples) {
    if (seen.insert(t.query_id).second) query_ids.push_back(t.query_id);
  }
  std::vector<std::vector<std::string>> doc_texts;
  doc_texts.reserve(corpus.documents.size());
  for (const Document& d : corpus.documents) doc_texts.push_back(d.tokens);

  std::vector<QueryRanking> ranked =
      parallel_map<QueryRanking>(query_ids.size(), config.jobs, [&](size_t i) {
        const Query& query = corpus.queries[corpus.query_index.at(query_ids[i])];
        const std::vector<double> scores = scorer.score_batch(query, doc_texts);
        QueryRanking r;
        r.entries.reserve(scores.size());
        for (size_t d = 0; d < scores.size(); ++d) {
          r.entries.emplace_back(corpus.documents[d].id, scores[d]);
        }
        std::sort(r.entries.begin(), r.entries.end(), [](const auto& a, const auto& b) {
          if (a.second != b.second) return a.second > b.second;
          return a.first < b.first;
        });
        for (const auto& [id, score] : r.entries) {
          r.ranked_ids.push_back(id);
          r.score_by_id.emplace(id, score);
        }
        return r;
      });
  std::unordered_map<std::string, QueryRanking> out;
  for (size_t i = 0; i < query_ids.size(); ++i) out.emplace(query_ids[i], std::move(ranked[i]));
  return out;
}

// Rank-change pool: the query's top pool_size documents plus every attributed
// target, so the pool always contains the document under attribution.
RankContext attribution_pool(const QueryRanking& ranking, const std::vector<std::string>& targets,
                             size_t pool_size) {
  std::vector<std::pair<std::string, double>> pool;
  const size_t keep = std::min(pool_size, ranking.entries.size());
  pool.assign(ranking.entries.begin(), ranking.entries.begin() + keep);
  std::unordered_set<std::string> in_pool;
  for (const auto& [id, score] : pool) in_pool.insert(id);
  for (const std::string& id : targets) {
    if (in_pool.insert(id).second) pool.emplace_back(id, ranking.score_by_id.at(id));
  }
  return RankContext(std::move(pool));
}

// Synthetic token streams keep the gradient check runnable when the loss is
// evaluated from explicit scores rather than a corpus.
std::vector<TrainingExample> synthetic_batch(size_t batch, size_t negatives, uint64_t seed) {
  std::vector<TrainingExample> out;
  out.reserve(batch);
  for (size_t i = 0; i < batch; ++i) {
    Rng rng(mix_seed(seed, 9000 + i));
    auto draw = [&rng](size_t count) {
      std::vector<std::string> tokens;
      tokens.reserve(count);
      for (size_t t = 0; t < count; ++t) tokens.push_back("w" + std::to_string(rng.below(40)));
      return tokens;
    };
    TrainingExample ex;
    ex.query = draw(4);
    ex.pos = draw(12);
    ex.partial = draw(10);
    ex.full = draw(8);
    ex.adv = draw(12);
    for (size_t j = 0; j < negatives; ++j) ex.negs.push_back(draw(10));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

ScorerHandle make_scorer(const PipelineConfig& config, const std::vector<Document>& docs) {
  ScorerHandle handle;
  if (config.scorer_kind == "bm25") {
    handle.scorer = std::make_unique<Bm25Scorer>(docs, config.bm25);
  } else if (config.scorer_kind == "reference") {
    handle.encoder =
        std::make_unique<ReferenceEncoder>(config.hash_dim, config.embed_dim, config.encoder_seed);
    handle.scorer = std::make_unique<ReferenceScorer>(*handle.encoder);
  } else if (config.scorer_kind == "embedding") {
    auto query_store =
        std::make_shared<EmbeddingStore>(EmbeddingStore::load(config.query_embeddings_path));
    auto doc_store =
        std::make_shared<EmbeddingStore>(EmbeddingStore::load(config.doc_embeddings_path));
    std::shared_ptr<const RemoteEncoder> remote;
    if (!config.endpoint.empty()) {
      remote = std::make_shared<RemoteEncoder>(config.endpoint, doc_store->dimension(),
                                               config.timeout_s);
    }
    handle.scorer = std::make_unique<EmbeddingScorer>(std::move(query_store), std::move(doc_store),
                                                      similarity_from_string(config.similarity),
                                                      std::move(remote));
  } else if (config.scorer_kind == "remote") {
    RemoteScorerConfig remote_config;
    remote_config.base_url = config.endpoint;
    remote_config.max_in_flight = config.max_in_flight;
    remote_config.timeout_s = config.timeout_s;
    remote_config.retries = config.retries;
    auto scorer = std::make_unique<RemoteScorer>(remote_config);
    scorer->register_documents(docs);
    handle.scorer = std::move(scorer);
  } else {
    throw ValidationError("unknown scorer kind: " + config.scorer_kind);
  }
  return handle;
}

std::string attribution_json_line(const AttributionResult& result) {
  nlohmann::json j;
  j["query_id"] = result.query_id;
  j["doc_id"] = result.doc_id;
  j["method"] = result.method;
  j["resolution"] = result.resolution;
  nlohmann::json values = nlohmann::json::array();
  for (const std::optional<double>& v : result.values) {
    values.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  }
  j["values"] = std::move(values);
  j["key_index"] = result.key_index ? nlohmann::json(*result.key_index) : nlohmann::json();
  j["coalition_evals"] = result.coalition_evals;
  return j.dump();
}

std::string counterfactual_json_line(const CounterfactualDoc& doc) {
  nlohmann::json j;
  j["origin"] = doc.origin_doc_id;
  j["kind"] = doc.kind;
  j["seed"] = doc.seed;
  j["text"] = doc.text();
  nlohmann::json provenance = nlohmann::json::array();
  for (const Edit& e : doc.provenance) provenance.push_back(edit_json(e));
  j["provenance"] = std::move(provenance);
  return j.dump();
}

CounterfactualDoc adversarial_record(const Document& doc, const AdversarialDoc& adv,
                                     uint64_t seed) {
  CounterfactualDoc out;
  out.origin_doc_id = doc.id;
  out.kind = "adversarial";
  out.seed = seed;
  out.tokens = adv.tokens;
  for (size_t p : adv.replaced_positions) {
    Edit e;
    e.op = Edit::Op::kReplaceToken;
    e.start = p;
    e.end = p + 1;
    e.old_token = doc.tokens[p];
    e.new_token = adv.tokens[p];
    out.provenance.push_back(std::move(e));
  }
  return out;
}

int cmd_segment(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, false);
  const std::vector<SegmentedDocument> base = segment_documents(corpus, config);
  const SegmentRecords records = build_segment_records(corpus, base, config);
  std::string lines;
  for (size_t i = 0; i < records.segs.size(); ++i) {
    lines += segment_json(records.segs[i], records.query_ids[i]).dump();
    lines += '\n';
  }
  const CorpusStats stats = corpus_stats(records.segs);
  write_text_file(out_path(config, "segments.jsonl"), lines);
  write_text_file(out_path(config, "stats.json"), corpus_stats_json(stats) + "\n");
  log_line("segment: " + std::to_string(records.segs.size()) + " records (" +
           std::to_string(corpus.triples.size()) + " triples) -> segments.jsonl, stats.json");
  return kExitOk;
}

int cmd_stats(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, false);
  const std::vector<SegmentedDocument> base = segment_documents(corpus, config);
  const SegmentRecords records = build_segment_records(corpus, base, config);
  const CorpusStats stats = corpus_stats(records.segs);
  write_text_file(out_path(config, "stats.json"), corpus_stats_json(stats) + "\n");
  log_line("stats: positive_psg_ratio = " + std::to_string(stats.positive_psg_ratio) +
           ", average_psg_num = " + std::to_string(stats.average_psg_num));
  return kExitOk;
}

int cmd_attribute(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, true);
  const ScorerHandle handle = make_scorer(config, corpus.documents);
  const Scorer& scorer = *handle.scorer;
  const std::vector<SegmentedDocument> base = segment_documents(corpus, config);

  AttributionOptions opts;
  if (config.attribution_method == "shapley_exact") {
    opts.method = AttributionMethod::kShapley;
    opts.shapley.mode = ShapleyMode::kExact;
  } else if (config.attribution_method == "shapley_mc") {
    opts.method = AttributionMethod::kShapley;
    opts.shapley.mode = ShapleyMode::kMc;
  } else {
    opts.method = attribution_method_from_string(config.attribution_method);
    opts.shapley.mode = shapley_mode_from_string(config.shapley_mode);
  }
  opts.resolution = overlap_resolution_from_string(config.resolution);
  opts.shapley.num_permutations = config.num_permutations;
  opts.mode = modification_from_config(config);

  std::unordered_map<std::string, RankContext> pools;
  if (opts.method == AttributionMethod::kDeltaRank) {
    const std::unordered_map<std::string, QueryRanking> rankings =
        rank_queries(scorer, corpus, config);
    std::unordered_map<std::string, std::vector<std::string>> targets;
    for (const Triple& t : corpus.triples) targets[t.query_id].push_back(t.doc_id);
    for (const auto& [query_id, ranking] : rankings) {
      pools.emplace(query_id, attribution_pool(ranking, targets.at(query_id), config.pool_size));
    }
  }

  struct Outcome {
    std::string line;
    std::string error;
  };
  const std::vector<Outcome> outcomes =
      parallel_map<Outcome>(corpus.triples.size(), config.jobs, [&](size_t i) {
        const Triple& t = corpus.triples[i];
        const Query& query = corpus.queries[corpus.query_index.at(t.query_id)];
        const SegmentedDocument& seg = base[corpus.doc_index.at(t.doc_id)];
        AttributionOptions record_opts = opts;
        record_opts.seed = mix_seed(config.seed, i);
        record_opts.shapley.seed = record_opts.seed;
        const RankContext* pool = nullptr;
        const auto it = pools.find(t.query_id);
        if (it != pools.end()) pool = &it->second;
        Outcome out;
        try {
          out.line = attribution_json_line(attribute(scorer, query, seg, pool, record_opts));
        } catch (const ScorerError& e) {
          out.error = e.what();
        }
        return out;
      });

  std::string lines;
  size_t failed = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].error.empty()) {
      ++failed;
      log_line("attribute: record " + std::to_string(i) + " (query " +
               corpus.triples[i].query_id + ", doc " + corpus.triples[i].doc_id +
               "): " + outcomes[i].error);
      continue;
    }
    lines += outcomes[i].line;
    lines += '\n';
  }
  write_text_file(out_path(config, "attributions.jsonl"), lines);
  log_line("attribute: wrote " + std::to_string(outcomes.size() - failed) + " of " +
           std::to_string(outcomes.size()) + " records -> attributions.jsonl");
  return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_counterfactual(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, true);
  const ScorerHandle handle = make_scorer(config, corpus.documents);
  const Scorer& scorer = *handle.scorer;
  const std::vector<SegmentedDocument> base = segment_documents(corpus, config);
  const Modification mode = modification_from_config(config);

  struct Outcome {
    std::vector<std::string> lines;
    std::string error;
    std::string note;
  };
  const std::vector<Outcome> outcomes =
      parallel_map<Outcome>(corpus.triples.size(), config.jobs, [&](size_t i) {
        Outcome out;
        const Triple& t = corpus.triples[i];
        const Query& query = corpus.queries[corpus.query_index.at(t.query_id)];
        const Document& doc = corpus.documents[corpus.doc_index.at(t.doc_id)];
        const uint64_t record_seed = mix_seed(config.seed, i);
        try {
          const SegmentedDocument seg = seg_with_gold(base[corpus.doc_index.at(t.doc_id)],
                                                      tokenize(t.relevant_passage_text));
          if (!seg.positive_index.has_value()) {
            out.note = "gold passage uncovered";
            return out;
          }
          const Passage& positive = seg.passages[*seg.positive_index];
          const TokenRange span{positive.token_start, positive.token_end};
          out.lines.push_back(counterfactual_json_line(
              partial_counterfactual(doc, span, mix_seed(record_seed, 1))));
          out.lines.push_back(counterfactual_json_line(full_counterfactual(doc, span)));
          const uint64_t adv_seed = mix_seed(record_seed, 2);
          out.lines.push_back(counterfactual_json_line(adversarial_record(
              doc,
              adversarial(doc, query, scorer, config.epsilon, config.num_candidates, adv_seed),
              adv_seed)));
          for (size_t p = 0; p < seg.passages.size(); ++p) {
            out.lines.push_back(
                counterfactual_json_line(construct(seg, p, mode, mix_seed(record_seed, 3 + p))));
          }
        } catch (const ScorerError& e) {
          out.lines.clear();
          out.error = e.what();
        } catch (const ValidationError& e) {
          // Construction infeasible for this document's shape (for example a
          // counterfactual that would empty it); skip the record.
          out.lines.clear();
          out.note = e.what();
        }
        return out;
      });

  std::string lines;
  size_t failed = 0;
  size_t skipped = 0;
  size_t written = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    const Outcome& out = outcomes[i];
    const std::string where = "counterfactual: record " + std::to_string(i) + " (query " +
                              corpus.triples[i].query_id + ", doc " + corpus.triples[i].doc_id +
                              ")";
    if (!out.error.empty()) {
      ++failed;
      log_line(where + ": " + out.error);
      continue;
    }
    if (!out.note.empty()) {
      ++skipped;
      log_line(where + " skipped: " + out.note);
      continue;
    }
    for (const std::string& line : out.lines) {
      lines += line;
      lines += '\n';
      ++written;
    }
  }
  write_text_file(out_path(config, "counterfactuals.jsonl"), lines);
  log_line("counterfactual: wrote " + std::to_string(written) + " documents from " +
           std::to_string(outcomes.size() - failed - skipped) + " of " +
           std::to_string(outcomes.size()) + " records -> counterfactuals.jsonl");
  return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_attack(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, true);
  if (corpus.documents.size() < 2) {
    throw ValidationError("attack needs at least two documents");
  }
  const ScorerHandle handle = make_scorer(config, corpus.documents);
  const Scorer& scorer = *handle.scorer;
  const std::unordered_map<std::string, QueryRanking> rankings =
      rank_queries(scorer, corpus, config);

  std::vector<EvalRecord> before_records;
  before_records.reserve(corpus.triples.size());
  for (const Triple& t : corpus.triples) {
    before_records.push_back({t.query_id, rankings.at(t.query_id).ranked_ids, t.doc_id});
  }
  const double before = mrr_at_k(before_records, 10);

  // The attacker promotes the query's top-ranked non-relevant document; the
  // report tracks how far that pushes the relevant document down.
  struct Outcome {
    std::string line;
    double reciprocal_rank = 0.0;
  };
  const std::vector<Outcome> outcomes =
      parallel_map<Outcome>(corpus.triples.size(), config.jobs, [&](size_t i) {
        const Triple& t = corpus.triples[i];
        const Query& query = corpus.queries[corpus.query_index.at(t.query_id)];
        const QueryRanking& ranking = rankings.at(t.query_id);
        std::string attacked_id;
        for (const std::string& id : ranking.ranked_ids) {
          if (id != t.doc_id) {
            attacked_id = id;
            break;
          }
        }
        const Document& doc = corpus.documents[corpus.doc_index.at(attacked_id)];
        const uint64_t seed = mix_seed(config.seed, i);
        CounterfactualDoc attacked;
        if (config.attack_kind == "ts") {
          // The configured position count is a budget; short documents are
          // attacked at every position.
          const size_t positions = std::min(config.num_positions, doc.tokens.size());
          attacked = term_spam(doc, query, positions, seed);
        } else {
          attacked = adversarial_record(
              doc, adversarial(doc, query, scorer, config.epsilon, config.num_candidates, seed),
              seed);
        }
        const double attacked_score = scorer.score(query, attacked.tokens);
        const double gold_score = ranking.score_by_id.at(t.doc_id);
        size_t ahead = 0;
        for (const auto& [id, score] : ranking.entries) {
          if (id == t.doc_id) continue;
          const double s = id == attacked_id ? attacked_score : score;
          if (s > gold_score || (s == gold_score && id < t.doc_id)) ++ahead;
        }
        const size_t rank = ahead + 1;
        Outcome out;
        out.reciprocal_rank = rank <= 10 ? 1.0 / static_cast<double>(rank) : 0.0;
        out.line = counterfactual_json_line(attacked);
        return out;
      });

  double after = 0.0;
  std::string lines;
  for (const Outcome& out : outcomes) {
    after += out.reciprocal_rank;
    lines += out.line;
    lines += '\n';
  }
  after /= static_cast<double>(outcomes.size());

  const RobustnessReport report = robustness_report(before, after);
  AttackRow row;
  row.method = scorer.name();
  row.resolution = "none";
  row.metric = "mrr_at_10d";
  row.attack = config.attack_kind;
  row.before = report.metric_before;
  row.after = report.metric_after;
  row.pct_change = report.pct_change;

  nlohmann::json j;
  j["method"] = row.method;
  j["resolution"] = row.resolution;
  j["metric"] = row.metric;
  j["attack"] = row.attack;
  j["before"] = row.before;
  j["after"] = row.after;
  j["pct_change"] = row.pct_change;
  j["pct_rendered"] = render_pct(row.pct_change);

  write_text_file(out_path(config, "attack.jsonl"), lines);
  write_text_file(out_path(config, "attack_report.tsv"), render_attack_tsv({row}));
  write_text_file(out_path(config, "attack_report.json"), j.dump() + "\n");
  log_line("attack: " + row.attack + " " + row.metric + " " + std::to_string(row.before) +
           " -> " + std::to_string(row.after) + " (" + render_pct(row.pct_change) + ")");
  return kExitOk;
}

int cmd_eval(const PipelineConfig& config) {
  const LoadedCorpus corpus = load_corpus(config, true);
  const ScorerHandle handle = make_scorer(config, corpus.documents);
  const Scorer& scorer = *handle.scorer;
  const std::vector<SegmentedDocument> base = segment_documents(corpus, config);

  const std::filesystem::path attr_path =
      std::filesystem::path(config.out_dir) / "attributions.jsonl";
  if (!std::filesystem::exists(attr_path)) {
    throw ValidationError("missing " + attr_path.string() + "; run the attribute command first");
  }

  struct AttrRecord {
    std::string query_id;
    std::string doc_id;
    std::string method;
    std::string resolution;
    std::vector<std::optional<double>> values;
  };
  std::vector<AttrRecord> records;
  {
    std::ifstream in(attr_path);
    if (!in) throw ValidationError("cannot read " + attr_path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw ValidationError(attr_path.string() + ":" + std::to_string(lineno) +
                              ": malformed JSON line");
      }
      try {
        AttrRecord r;
        r.query_id = j.at("query_id").get<std::string>();
        r.doc_id = j.at("doc_id").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.resolution = j.at("resolution").get<std::string>();
        for (const nlohmann::json& v : j.at("values")) {
          r.values.push_back(v.is_null() ? std::nullopt
                                         : std::optional<double>(v.get<double>()));
        }
        records.push_back(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(attr_path.string() + ":" + std::to_string(lineno) + ": " +
                              e.what());
      }
    }
  }
  if (records.empty()) throw ValidationError("no evaluation records in " + attr_path.string());

  // Gold text per (query, document) pair; the first triple wins.
  std::unordered_map<std::string, std::string> gold_by_pair;
  for (const Triple& t : corpus.triples) {
    gold_by_pair.emplace(t.query_id + "\t" + t.doc_id, t.relevant_passage_text);
  }

  std::vector<PassageEvalRecord> passage_records;
  passage_records.reserve(records.size());
  for (const AttrRecord& r : records) {
    PassageEvalRecord pr;
    pr.query_id = r.query_id;
    pr.doc_id = r.doc_id;
    pr.values = r.values;
    const auto gold = gold_by_pair.find(r.query_id + "\t" + r.doc_id);
    const auto doc_it = corpus.doc_index.find(r.doc_id);
    if (gold != gold_by_pair.end() && doc_it != corpus.doc_index.end()) {
      const SegmentedDocument& seg = base[doc_it->second];
      try {
        const std::vector<double> coverage = gold_coverage(seg, tokenize(gold->second));
        if (r.resolution == "non_overlap") {
          pr.positive_index = remap_positive_even(coverage);
        } else {
          size_t best = 0;
          for (size_t i = 1; i < coverage.size(); ++i) {
            if (coverage[i] > coverage[best]) best = i;
          }
          if (coverage[best] >= 0.9) pr.positive_index = best;
        }
      } catch (const Error&) {
        // Gold span absent from the document: leave the positive unresolved.
      }
    }
    passage_records.push_back(std::move(pr));
  }
  const PassageEvalResult passage_result = passage_extraction_eval(passage_records, 10);

  const std::unordered_map<std::string, QueryRanking> rankings =
      rank_queries(scorer, corpus, config);
  std::vector<EvalRecord> doc_records;
  std::vector<GradedRecord> graded_records;
  doc_records.reserve(records.size());
  graded_records.reserve(records.size());
  for (const AttrRecord& r : records) {
    const auto it = rankings.find(r.query_id);
    if (it == rankings.end()) {
      throw ValidationError("attribution record references a query absent from the triples: " +
                            r.query_id);
    }
    doc_records.push_back({r.query_id, it->second.ranked_ids, r.doc_id});
    graded_records.push_back({r.query_id, it->second.ranked_ids, {{r.doc_id, 1.0}}});
  }
  const double mrr_doc = mrr_at_k(doc_records, 10);
  const double ndcg = ndcg_at_k(graded_records, 10);

  std::vector<ReportRow> rows;
  rows.push_back({records.front().method, records.front().resolution, "mrr_at_10p",
                  passage_result.mrr});
  rows.push_back({records.front().method, records.front().resolution, "mrr_at_10d", mrr_doc});
  rows.push_back({records.front().method, records.front().resolution, "ndcg_at_10", ndcg});

  nlohmann::json j;
  nlohmann::json row_array = nlohmann::json::array();
  for (const ReportRow& row : rows) {
    nlohmann::json rj;
    rj["method"] = row.method;
    rj["resolution"] = row.resolution;
    rj["metric"] = row.metric;
    rj["value"] = row.value;
    row_array.push_back(std::move(rj));
  }
  j["rows"] = std::move(row_array);
  j["evaluated"] = passage_result.evaluated;
  j["skipped"] = passage_result.skipped;

  write_text_file(out_path(config, "report.tsv"), render_report_tsv(rows));
  write_text_file(out_path(config, "report.json"), j.dump() + "\n");
  log_line("eval: mrr_at_10p = " + std::to_string(passage_result.mrr) + " (" +
           std::to_string(passage_result.evaluated) + " evaluated, " +
           std::to_string(passage_result.skipped) + " skipped), mrr_at_10d = " +
           std::to_string(mrr_doc) + ", ndcg_at_10 = " + std::to_string(ndcg));
  return kExitOk;
}

int cmd_loss_check(const PipelineConfig& config) {
  LossWeights weights;
  LossBundle bundle;
  GradCheckReport report;

  if (config.explicit_scores.has_value()) {
    weights = weights_plugin(config.alpha, config.beta);
    bundle = total_loss(*config.explicit_scores, weights);
    const ReferenceEncoder encoder(config.hash_dim, config.embed_dim, config.encoder_seed);
    const std::vector<TrainingExample> batch =
        synthetic_batch(config.grad_batch, config.num_negatives, config.seed);
    report = grad_check(encoder, batch, weights, config.epsilon_fd, config.grad_coordinates,
                        mix_seed(config.seed, 1));
  } else {
    const LoadedCorpus corpus = load_corpus(config, true);
    if (corpus.documents.size() < 2) {
      throw ValidationError("loss check needs at least two documents to draw negatives");
    }
    const std::vector<SegmentedDocument> base = segment_documents(corpus, config);
    const ReferenceEncoder encoder(config.hash_dim, config.embed_dim, config.encoder_seed);
    const ReferenceScorer ref_scorer(encoder);
    const size_t doc_count = corpus.documents.size();

    std::vector<TrainingExample> batch;
    std::optional<Query> first_query;
    std::optional<SegmentedDocument> first_seg;
    for (size_t i = 0; i < corpus.triples.size() && batch.size() < config.grad_batch; ++i) {
      const Triple& t = corpus.triples[i];
      const Query& query = corpus.queries[corpus.query_index.at(t.query_id)];
      const size_t d = corpus.doc_index.at(t.doc_id);
      const Document& doc = corpus.documents[d];
      SegmentedDocument seg = seg_with_gold(base[d], tokenize(t.relevant_passage_text));
      if (!seg.positive_index.has_value()) continue;
      const Passage& positive = seg.passages[*seg.positive_index];
      const TokenRange span{positive.token_start, positive.token_end};
      const uint64_t record_seed = mix_seed(config.seed, i);
      TrainingExample ex;
      ex.query = query.tokens;
      ex.pos = doc.tokens;
      try {
        ex.partial = partial_counterfactual(doc, span, mix_seed(record_seed, 1)).tokens;
        ex.full = full_counterfactual(doc, span).tokens;
        ex.adv = adversarial(doc, query, ref_scorer, config.epsilon, config.num_candidates,
                             mix_seed(record_seed, 2))
                     .tokens;
      } catch (const ValidationError&) {
        continue;  // counterfactuals infeasible for this document's shape
      }
      for (size_t n = 0; n < config.num_negatives; ++n) {
        ex.negs.push_back(corpus.documents[(d + 1 + (n % (doc_count - 1))) % doc_count].tokens);
      }
      if (batch.empty()) {
        first_query = query;
        first_seg = seg;
      }
      batch.push_back(std::move(ex));
    }
    if (batch.empty()) {
      throw ValidationError("no triple with a covered positive passage to build examples from");
    }

    if (config.loss_strategy == "plugin") {
      weights = weights_plugin(config.alpha, config.beta);
    } else if (config.loss_strategy == "rel") {
      weights = weights_rel(encoder.score(batch.front().query, batch.front().full));
    } else {
      // Weights from the positive passage's share of the attribution mass.
      // Merge keeps every slot defined when the windows overlap.
      const OverlapResolution resolution =
          config.overlap_ratio > 0.0 ? OverlapResolution::kMerge : OverlapResolution::kNone;
      ShapleyOptions shapley_opts;
      shapley_opts.mode = shapley_mode_from_string(config.shapley_mode);
      shapley_opts.num_permutations = config.num_permutations;
      shapley_opts.seed = mix_seed(config.seed, 3);
      const AttributionResult attr =
          shapley(ref_scorer, *first_query, *first_seg, resolution, shapley_opts);
      weights = weights_shapley(attr.values, *first_seg->positive_index);
    }
    bundle = total_loss(score_example(encoder, batch.front()), weights);
    report = grad_check(encoder, batch, weights, config.epsilon_fd, config.grad_coordinates,
                        mix_seed(config.seed, 4));
  }

  nlohmann::json j;
  j["l_cla"] = bundle.l_cla;
  j["l_neg"] = bundle.l_neg;
  j["l_pos"] = bundle.l_pos;
  j["l_adv"] = bundle.l_adv;
  j["alpha"] = bundle.alpha;
  j["beta"] = bundle.beta;
  j["total"] = bundle.total;
  j["grad_check_max_rel_err"] = report.max_rel_err;
  write_text_file(out_path(config, "loss_check.json"), j.dump() + "\n");
  log_line("loss-check: total = " + std::to_string(bundle.total) +
           ", grad_check_max_rel_err = " + std::to_string(report.max_rel_err));
  return kExitOk;
}

int cmd_pipeline(const PipelineConfig& config) {
  const std::vector<std::pair<std::string, int (*)(const PipelineConfig&)>> steps = {
      {"segment", cmd_segment},   {"attribute", cmd_attribute},
      {"counterfactual", cmd_counterfactual}, {"attack", cmd_attack},
      {"eval", cmd_eval},         {"loss-check", cmd_loss_check}};
  for (const auto& [name, fn] : steps) {
    log_line("pipeline: running " + name);
    const int code = fn(config);
    if (code != kExitOk) {
      log_line("pipeline: " + name + " exited with code " + std::to_string(code));
      return code;
    }
  }
  return kExitOk;
}

int run_command(const std::string& name, const PipelineConfig& config) {
  try {
    if (name == "segment") return cmd_segment(config);
    if (name == "stats") return cmd_stats(config);
    if (name == "attribute") return cmd_attribute(config);
    if (name == "counterfactual") return cmd_counterfactual(config);
    if (name == "attack") return cmd_attack(config);
    if (name == "loss-check" || name == "loss_check") return cmd_loss_check(config);
    if (name == "eval") return cmd_eval(config);
    if (name == "pipeline") return cmd_pipeline(config);
    throw ValidationError("unknown command: " + name);
  } catch (const ValidationError& e) {
    log_line(std::string("error: ") + e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kExitRuntime;
  }
}

}  // namespace cfrank
