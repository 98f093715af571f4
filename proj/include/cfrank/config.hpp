// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfrank/contrastive.hpp"
#include "cfrank/scoring.hpp"

namespace cfrank {

/// One parsed config value; configs are flat maps of dotted keys
/// ("section.key") to values.
struct ConfigValue {
  enum class Type { kString, kInt, kFloat, kBool, kArray };
  Type type = Type::kString;
  std::string str;
  int64_t integer = 0;
  double real = 0.0;
  bool boolean = false;
  std::vector<ConfigValue> array;

  double as_number() const;
};

using ConfigMap = std::map<std::string, ConfigValue>;

/// Parses the TOML subset used for pipeline configs: [section] headers,
/// key = value lines with string/integer/float/bool/array values, and #
/// comments. Errors carry line numbers.
ConfigMap parse_toml_text(const std::string& text);

/// Parses the JSON mirror: one object, one level of section objects.
ConfigMap parse_json_text(const std::string& text);

/// Dispatches on extension: .toml or .json.
ConfigMap load_config_file(const std::string& path);

struct PipelineConfig {
  // corpus
  std::string documents_path;
  std::string queries_path;
  std::string triples_path;
  // segment
  size_t window_size = 128;
  double overlap_ratio = 0.0;
  // scorer
  std::string scorer_kind = "bm25";  // bm25 | remote | embedding | reference
  Bm25Params bm25;
  std::string endpoint;
  std::string query_embeddings_path;
  std::string doc_embeddings_path;
  std::string similarity = "cosine";
  size_t max_in_flight = 8;
  double timeout_s = 30.0;
  size_t retries = 2;
  size_t hash_dim = 64;
  size_t embed_dim = 16;
  uint64_t encoder_seed = 7;
  // attribution
  std::string attribution_method = "shapley";
  std::string resolution;  // defaults to none (overlap 0) or non_overlap
  std::string shapley_mode = "auto";
  size_t num_permutations = 5000;
  size_t pool_size = 100;
  // counterfactual
  std::string counterfactual_mode = "deletion";
  double word_ratio = 0.15;
  // adversarial
  double epsilon = 0.1;
  size_t num_candidates = 32;
  // attack
  std::string attack_kind = "ts";  // ts | adversarial
  size_t num_positions = 8;
  // loss
  std::string loss_strategy = "plugin";  // rel | shapley | plugin
  double alpha = 0.5;
  double beta = 0.5;
  double epsilon_fd = 1e-5;
  size_t grad_coordinates = 64;
  size_t num_negatives = 1;
  size_t grad_batch = 2;
  std::optional<ScoreBundle> explicit_scores;  // loss.s_pos .. loss.s_negs
  // run
  uint64_t seed = 42;
  size_t jobs = 0;  // 0 = logical cores
  std::string out_dir = "out";
};

/// Builds a PipelineConfig from a parsed map. Validation is total: every
/// invalid or unknown field is collected, and the error message names each
/// one. Input paths that are set must exist.
PipelineConfig parse_pipeline_config(const ConfigMap& map);

PipelineConfig load_pipeline_config(const std::string& path);

}  // namespace cfrank
