// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "cfrank/config.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfrank/error.hpp"

namespace cfrank {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(size_t line, const std::string& what) {
  throw ValidationError("config parse error at line " + std::to_string(line) + ": " + what);
}

// Cuts a trailing comment, respecting double-quoted strings.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (std::isalnum(static_cast<unsigned char>(c)) == 0 && c != '_' && c != '-' && c != '.') {
      return false;
    }
  }
  return true;
}

std::string parse_quoted(const std::string& raw, size_t line) {
  if (raw.size() < 2 || raw.back() != '"') parse_fail(line, "unterminated string");
  std::string out;
  for (size_t i = 1; i + 1 < raw.size(); ++i) {
    char c = raw[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    ++i;
    if (i >= raw.size() - 1) parse_fail(line, "unterminated string");
    switch (raw[i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      default: parse_fail(line, std::string("bad escape \\") + raw[i]);
    }
  }
  return out;
}

bool looks_like_int(const std::string& s) {
  size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i])) == 0) return false;
  }
  return true;
}

ConfigValue parse_scalar(const std::string& raw, size_t line);

std::vector<std::string> split_array_items(const std::string& body, size_t line) {
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (in_string) {
      cur += c;
      if (c == '\\' && i + 1 < body.size()) {
        cur += body[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      cur += c;
    } else if (c == ',') {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_string) parse_fail(line, "unterminated string in array");
  std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);
  for (const std::string& item : items) {
    if (item.empty()) parse_fail(line, "empty array element");
  }
  return items;
}

ConfigValue parse_value(const std::string& raw, size_t line) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') parse_fail(line, "unterminated array");
    ConfigValue v;
    v.type = ConfigValue::Type::kArray;
    for (const std::string& item : split_array_items(raw.substr(1, raw.size() - 2), line)) {
      v.array.push_back(parse_scalar(item, line));
    }
    return v;
  }
  return parse_scalar(raw, line);
}

ConfigValue parse_scalar(const std::string& raw, size_t line) {
  if (raw.empty()) parse_fail(line, "missing value");
  ConfigValue v;
  if (raw.front() == '"') {
    v.type = ConfigValue::Type::kString;
    v.str = parse_quoted(raw, line);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.type = ConfigValue::Type::kBool;
    v.boolean = raw == "true";
    return v;
  }
  if (looks_like_int(raw)) {
    v.type = ConfigValue::Type::kInt;
    try {
      v.integer = std::stoll(raw);
    } catch (const std::exception&) {
      parse_fail(line, "integer out of range: " + raw);
    }
    return v;
  }
  try {
    size_t used = 0;
    v.real = std::stod(raw, &used);
    if (used != raw.size()) parse_fail(line, "bad value: " + raw);
    v.type = ConfigValue::Type::kFloat;
    return v;
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception&) {
    parse_fail(line, "bad value: " + raw);
  }
}

ConfigValue from_json_value(const json& j, const std::string& key) {
  ConfigValue v;
  if (j.is_string()) {
    v.type = ConfigValue::Type::kString;
    v.str = j.get<std::string>();
  } else if (j.is_boolean()) {
    v.type = ConfigValue::Type::kBool;
    v.boolean = j.get<bool>();
  } else if (j.is_number_integer() || j.is_number_unsigned()) {
    v.type = ConfigValue::Type::kInt;
    v.integer = j.get<int64_t>();
  } else if (j.is_number_float()) {
    v.type = ConfigValue::Type::kFloat;
    v.real = j.get<double>();
  } else if (j.is_array()) {
    v.type = ConfigValue::Type::kArray;
    for (const json& item : j) v.array.push_back(from_json_value(item, key));
  } else {
    throw ValidationError("config key " + key + ": unsupported JSON value");
  }
  return v;
}

/// Collects every validation problem, then reports them all at once.
class FieldReader {
 public:
  explicit FieldReader(const ConfigMap& map) : map_(map) {}

  bool has(const std::string& key) {
    known_.push_back(key);
    return map_.count(key) != 0;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    known_.push_back(key);
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    if (it->second.type != ConfigValue::Type::kString) {
      fail(key, "expected a string");
      return fallback;
    }
    return it->second.str;
  }

  double get_number(const std::string& key, double fallback) {
    known_.push_back(key);
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    if (it->second.type != ConfigValue::Type::kInt &&
        it->second.type != ConfigValue::Type::kFloat) {
      fail(key, "expected a number");
      return fallback;
    }
    return it->second.as_number();
  }

  int64_t get_int(const std::string& key, int64_t fallback) {
    known_.push_back(key);
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    if (it->second.type != ConfigValue::Type::kInt) {
      fail(key, "expected an integer");
      return fallback;
    }
    return it->second.integer;
  }

  std::optional<std::vector<double>> get_number_array(const std::string& key) {
    known_.push_back(key);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    if (it->second.type != ConfigValue::Type::kArray) {
      fail(key, "expected an array of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    for (const ConfigValue& item : it->second.array) {
      if (item.type != ConfigValue::Type::kInt && item.type != ConfigValue::Type::kFloat) {
        fail(key, "expected an array of numbers");
        return std::nullopt;
      }
      out.push_back(item.as_number());
    }
    return out;
  }

  void fail(const std::string& key, const std::string& what) {
    errors_.push_back(key + ": " + what);
  }

  void check_unknown() {
    for (const auto& [key, value] : map_) {
      bool found = false;
      for (const std::string& k : known_) {
        if (k == key) {
          found = true;
          break;
        }
      }
      if (!found) errors_.push_back(key + ": unknown config key");
    }
  }

  void finish() const {
    if (errors_.empty()) return;
    std::string joined = "invalid config: ";
    for (size_t i = 0; i < errors_.size(); ++i) {
      if (i > 0) joined += "; ";
      joined += errors_[i];
    }
    throw ValidationError(joined);
  }

 private:
  const ConfigMap& map_;
  std::vector<std::string> known_;
  std::vector<std::string> errors_;
};

bool one_of(const std::string& value, std::initializer_list<const char*> choices) {
  for (const char* c : choices) {
    if (value == c) return true;
  }
  return false;
}

}  // namespace

double ConfigValue::as_number() const {
  if (type == Type::kInt) return static_cast<double>(integer);
  if (type == Type::kFloat) return real;
  throw ValidationError("config value is not a number");
}

ConfigMap parse_toml_text(const std::string& text) {
  ConfigMap map;
  std::string section;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') parse_fail(line_no, "unterminated section header");
      section = trim(body.substr(1, body.size() - 2));
      if (!valid_key(section)) parse_fail(line_no, "bad section name: " + section);
      continue;
    }
    size_t eq = std::string::npos;
    bool in_string = false;
    for (size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') in_string = !in_string;
      if (body[i] == '=' && !in_string) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    std::string key = trim(body.substr(0, eq));
    if (!valid_key(key)) parse_fail(line_no, "bad key: " + key);
    std::string full = section.empty() ? key : section + "." + key;
    if (map.count(full) != 0) parse_fail(line_no, "duplicate key: " + full);
    map[full] = parse_value(trim(body.substr(eq + 1)), line_no);
  }
  return map;
}

ConfigMap parse_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  ConfigMap map;
  for (const auto& [section, value] : j.items()) {
    if (value.is_object()) {
      for (const auto& [key, inner] : value.items()) {
        std::string full = section + "." + key;
        if (inner.is_object()) throw ValidationError("config key " + full + ": nested too deep");
        map[full] = from_json_value(inner, full);
      }
    } else {
      map[section] = from_json_value(value, section);
    }
  }
  return map;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    return parse_json_text(buf.str());
  }
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml") {
    return parse_toml_text(buf.str());
  }
  throw ValidationError("config file must end in .toml or .json: " + path);
}

PipelineConfig parse_pipeline_config(const ConfigMap& map) {
  FieldReader r(map);
  PipelineConfig c;

  c.documents_path = r.get_string("corpus.documents", "");
  c.queries_path = r.get_string("corpus.queries", "");
  c.triples_path = r.get_string("corpus.triples", "");
  for (const auto& [key, path] : std::initializer_list<std::pair<const char*, std::string>>{
           {"corpus.documents", c.documents_path},
           {"corpus.queries", c.queries_path},
           {"corpus.triples", c.triples_path}}) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      r.fail(key, "path does not exist: " + path);
    }
  }

  int64_t window = r.get_int("segment.window_size", 128);
  if (window < 1) {
    r.fail("segment.window_size", "must be a positive integer");
  } else {
    c.window_size = static_cast<size_t>(window);
  }
  c.overlap_ratio = r.get_number("segment.overlap_ratio", 0.0);
  if (!(c.overlap_ratio >= 0.0 && c.overlap_ratio < 1.0)) {
    r.fail("segment.overlap_ratio", "must lie in [0, 1)");
  } else {
    double stride = static_cast<double>(c.window_size) * (1.0 - c.overlap_ratio);
    if (std::fabs(stride - std::round(stride)) > 1e-9 || std::round(stride) < 1.0) {
      r.fail("segment.overlap_ratio", "window_size * (1 - overlap_ratio) must be a positive integer");
    }
  }

  c.scorer_kind = r.get_string("scorer.kind", "bm25");
  if (!one_of(c.scorer_kind, {"bm25", "remote", "embedding", "reference"})) {
    r.fail("scorer.kind", "must be one of bm25, remote, embedding, reference");
  }
  c.bm25.k1 = r.get_number("scorer.k1", 0.9);
  c.bm25.b = r.get_number("scorer.b", 0.4);
  if (c.bm25.k1 < 0.0) r.fail("scorer.k1", "must be >= 0");
  if (c.bm25.b < 0.0 || c.bm25.b > 1.0) r.fail("scorer.b", "must lie in [0, 1]");
  c.endpoint = r.get_string("scorer.endpoint", "");
  c.query_embeddings_path = r.get_string("scorer.query_embeddings", "");
  c.doc_embeddings_path = r.get_string("scorer.doc_embeddings", "");
  for (const auto& [key, path] : std::initializer_list<std::pair<const char*, std::string>>{
           {"scorer.query_embeddings", c.query_embeddings_path},
           {"scorer.doc_embeddings", c.doc_embeddings_path}}) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      r.fail(key, "path does not exist: " + path);
    }
  }
  c.similarity = r.get_string("scorer.similarity", "cosine");
  if (!one_of(c.similarity, {"cosine", "dot"})) {
    r.fail("scorer.similarity", "must be cosine or dot");
  }
  int64_t in_flight = r.get_int("scorer.max_in_flight", 8);
  if (in_flight < 1) {
    r.fail("scorer.max_in_flight", "must be >= 1");
  } else {
    c.max_in_flight = static_cast<size_t>(in_flight);
  }
  c.timeout_s = r.get_number("scorer.timeout_s", 30.0);
  if (!(c.timeout_s > 0.0)) r.fail("scorer.timeout_s", "must be > 0");
  int64_t retries = r.get_int("scorer.retries", 2);
  if (retries < 0) {
    r.fail("scorer.retries", "must be >= 0");
  } else {
    c.retries = static_cast<size_t>(retries);
  }
  int64_t hash_dim = r.get_int("scorer.hash_dim", 64);
  int64_t embed_dim = r.get_int("scorer.embed_dim", 16);
  if (hash_dim < 1) {
    r.fail("scorer.hash_dim", "must be >= 1");
  } else {
    c.hash_dim = static_cast<size_t>(hash_dim);
  }
  if (embed_dim < 1) {
    r.fail("scorer.embed_dim", "must be >= 1");
  } else {
    c.embed_dim = static_cast<size_t>(embed_dim);
  }
  c.encoder_seed = static_cast<uint64_t>(r.get_int("scorer.encoder_seed", 7));
  if (c.scorer_kind == "remote" && c.endpoint.empty()) {
    r.fail("scorer.endpoint", "required for the remote scorer");
  }
  if (c.scorer_kind == "embedding") {
    if (c.query_embeddings_path.empty()) {
      r.fail("scorer.query_embeddings", "required for the embedding scorer");
    }
    if (c.doc_embeddings_path.empty()) {
      r.fail("scorer.doc_embeddings", "required for the embedding scorer");
    }
  }

  // shapley_exact / shapley_mc force the variant; plain shapley defers to
  // shapley_mode.
  c.attribution_method = r.get_string("attribution.method", "shapley");
  if (!one_of(c.attribution_method,
              {"delta_rank", "delta_rel", "shapley", "shapley_exact", "shapley_mc"})) {
    r.fail("attribution.method",
           "must be one of delta_rank, delta_rel, shapley, shapley_exact, shapley_mc");
  }
  std::string default_resolution = c.overlap_ratio > 0.0 ? "non_overlap" : "none";
  c.resolution = r.get_string("attribution.resolution", default_resolution);
  if (!one_of(c.resolution, {"none", "non_overlap", "merge"})) {
    r.fail("attribution.resolution", "must be one of none, non_overlap, merge");
  }
  if (c.resolution == "none" && c.overlap_ratio > 0.0 &&
      c.attribution_method.rfind("shapley", 0) == 0) {
    r.fail("attribution.resolution", "overlapping passages need non_overlap or merge");
  }
  c.shapley_mode = r.get_string("attribution.shapley_mode", "auto");
  if (!one_of(c.shapley_mode, {"auto", "exact", "mc", "exhaustive"})) {
    r.fail("attribution.shapley_mode", "must be one of auto, exact, mc, exhaustive");
  }
  int64_t perms = r.get_int("attribution.num_permutations", 5000);
  if (perms < 1) {
    r.fail("attribution.num_permutations", "must be >= 1");
  } else {
    c.num_permutations = static_cast<size_t>(perms);
  }
  int64_t pool = r.get_int("attribution.pool_size", 100);
  if (pool < 2) {
    r.fail("attribution.pool_size", "must be >= 2");
  } else {
    c.pool_size = static_cast<size_t>(pool);
  }

  c.counterfactual_mode = r.get_string("counterfactual.mode", "deletion");
  if (!one_of(c.counterfactual_mode, {"deletion", "modification", "replacement"})) {
    r.fail("counterfactual.mode", "must be one of deletion, modification, replacement");
  }
  c.word_ratio = r.get_number("counterfactual.word_ratio", 0.15);
  if (!(c.word_ratio > 0.0 && c.word_ratio <= 1.0)) {
    r.fail("counterfactual.word_ratio", "must lie in (0, 1]");
  }

  c.epsilon = r.get_number("adversarial.epsilon", 0.1);
  if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) {
    r.fail("adversarial.epsilon", "must lie in [0, 1]");
  }
  int64_t cands = r.get_int("adversarial.num_candidates", 32);
  if (cands < 1) {
    r.fail("adversarial.num_candidates", "must be >= 1");
  } else {
    c.num_candidates = static_cast<size_t>(cands);
  }

  c.attack_kind = r.get_string("attack.kind", "ts");
  if (!one_of(c.attack_kind, {"ts", "adversarial"})) {
    r.fail("attack.kind", "must be ts or adversarial");
  }
  int64_t positions = r.get_int("attack.num_positions", 8);
  if (positions < 0) {
    r.fail("attack.num_positions", "must be >= 0");
  } else {
    c.num_positions = static_cast<size_t>(positions);
  }

  c.loss_strategy = r.get_string("loss.strategy", "plugin");
  if (!one_of(c.loss_strategy, {"rel", "shapley", "plugin"})) {
    r.fail("loss.strategy", "must be one of rel, shapley, plugin");
  }
  c.alpha = r.get_number("loss.alpha", 0.5);
  c.beta = r.get_number("loss.beta", 0.5);
  if (!std::isfinite(c.alpha)) r.fail("loss.alpha", "must be finite");
  if (!std::isfinite(c.beta)) r.fail("loss.beta", "must be finite");
  c.epsilon_fd = r.get_number("loss.epsilon_fd", 1e-5);
  if (!(c.epsilon_fd >= 1e-7 && c.epsilon_fd <= 1e-3)) {
    r.fail("loss.epsilon_fd", "must lie in [1e-7, 1e-3]");
  }
  int64_t coords = r.get_int("loss.grad_coordinates", 64);
  if (coords < 1) {
    r.fail("loss.grad_coordinates", "must be >= 1");
  } else {
    c.grad_coordinates = static_cast<size_t>(coords);
  }
  int64_t negatives = r.get_int("loss.num_negatives", 1);
  if (negatives < 1) {
    r.fail("loss.num_negatives", "must be >= 1");
  } else {
    c.num_negatives = static_cast<size_t>(negatives);
  }
  int64_t grad_batch = r.get_int("loss.grad_batch", 2);
  if (grad_batch < 1) {
    r.fail("loss.grad_batch", "must be >= 1");
  } else {
    c.grad_batch = static_cast<size_t>(grad_batch);
  }

  bool any_score = r.has("loss.s_pos") || r.has("loss.s_partial") || r.has("loss.s_full") ||
                   r.has("loss.s_adv") || r.has("loss.s_negs");
  if (any_score) {
    ScoreBundle scores;
    scores.s_pos = r.get_number("loss.s_pos", 0.0);
    scores.s_partial = r.get_number("loss.s_partial", 0.0);
    scores.s_full = r.get_number("loss.s_full", 0.0);
    scores.s_adv = r.get_number("loss.s_adv", 0.0);
    auto negs = r.get_number_array("loss.s_negs");
    if (!negs || negs->empty()) {
      r.fail("loss.s_negs", "explicit scores need at least one negative");
    } else {
      scores.s_negs = *negs;
    }
    if (c.loss_strategy != "plugin") {
      r.fail("loss.strategy", "explicit scores require the plugin strategy");
    }
    c.explicit_scores = std::move(scores);
  }

  c.seed = static_cast<uint64_t>(r.get_int("run.seed", 42));
  int64_t jobs = r.get_int("run.jobs", 0);
  if (jobs < 0) {
    r.fail("run.jobs", "must be >= 0");
  } else {
    c.jobs = static_cast<size_t>(jobs);
  }
  c.out_dir = r.get_string("run.out", "out");
  if (c.out_dir.empty()) r.fail("run.out", "must not be empty");

  r.check_unknown();
  r.finish();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return parse_pipeline_config(load_config_file(path));
}

}  // namespace cfrank
