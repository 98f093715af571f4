// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfrank/corpus.hpp"

namespace fixtures {

/// Synthetic retrieval corpus with planted relevance: each query owns three
/// unique terms that appear only inside one 16-token window of its relevant
/// document, at in-window offsets 2, 8 and 13 so the terms straddle both
/// halves of the window. Segmented at window 16 / overlap 0.5 the planted
/// window is always an even index. Remaining tokens are shared noise.
struct PlantedCorpus {
  std::vector<cfrank::Document> documents;
  std::vector<cfrank::Query> queries;
  std::vector<cfrank::Triple> triples;        // one per query, aligned by index
  std::vector<size_t> planted_window;         // even window index per query
  size_t window_size = 16;
  double overlap_ratio = 0.5;
};

PlantedCorpus make_planted_corpus(uint64_t seed, size_t num_docs = 200, size_t num_queries = 20);

/// Writes documents.jsonl, queries.jsonl and triples.tsv under dir.
void write_corpus_files(const PlantedCorpus& corpus, const std::filesystem::path& dir);

/// Fresh empty directory under the system temp root.
std::filesystem::path make_temp_dir(const std::string& tag);

/// Runs a command line and returns its exit code (normalized from the shell
/// wait status).
int run_cli(const std::string& command_line);

/// Whole file as a string; fails the calling test on a missing file.
std::string slurp(const std::filesystem::path& path);

}  // namespace fixtures
