// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include "fixtures.hpp"

#include <unistd.h>

#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cfrank/rng.hpp"
#include "cfrank/scoring.hpp"

namespace fixtures {
namespace {

std::string pad3(size_t value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03zu", value);
  return buf;
}

}  // namespace

PlantedCorpus make_planted_corpus(uint64_t seed, size_t num_docs, size_t num_queries) {
  if (num_queries > num_docs) throw std::invalid_argument("more queries than documents");
  PlantedCorpus corpus;
  cfrank::Rng rng(seed);
  // 160 tokens segment into 19 windows at window 16 / stride 8; the even
  // indices 0..18 are the 10 disjoint full-length windows.
  const size_t doc_len = 160;
  const size_t even_window_count = 10;
  auto noise = [&rng]() { return "n" + std::to_string(rng.below(400)); };

  for (size_t d = 0; d < num_docs; ++d) {
    std::vector<std::string> tokens(doc_len);
    for (std::string& t : tokens) t = noise();
    if (d < num_queries) {
      const size_t even_window = 2 * rng.below(even_window_count);
      const size_t start = 8 * even_window;
      const std::string stem = "q" + pad3(d);
      tokens[start + 2] = stem + "a";
      tokens[start + 8] = stem + "b";
      tokens[start + 13] = stem + "c";
      corpus.planted_window.push_back(even_window);
    }
    corpus.documents.push_back(
        cfrank::Document::make("d" + pad3(d), cfrank::join_tokens(tokens)));
  }
  for (size_t q = 0; q < num_queries; ++q) {
    const std::string stem = "q" + pad3(q);
    corpus.queries.push_back(
        cfrank::Query::make(stem, stem + "a " + stem + "b " + stem + "c"));
    const cfrank::Document& doc = corpus.documents[q];
    const size_t start = 8 * corpus.planted_window[q];
    const std::string gold = cfrank::join_tokens(
        std::span<const std::string>(doc.tokens).subspan(start, corpus.window_size));
    corpus.triples.push_back({stem, doc.id, gold});
  }
  return corpus;
}

void write_corpus_files(const PlantedCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "documents.jsonl", std::ios::binary);
    for (const cfrank::Document& doc : corpus.documents) {
      nlohmann::json j;
      j["id"] = doc.id;
      j["text"] = doc.text;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "queries.jsonl", std::ios::binary);
    for (const cfrank::Query& query : corpus.queries) {
      nlohmann::json j;
      j["id"] = query.id;
      j["text"] = query.text;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "triples.tsv", std::ios::binary);
    for (const cfrank::Triple& t : corpus.triples) {
      out << t.query_id << '\t' << t.doc_id << '\t' << t.relevant_passage_text << '\n';
    }
  }
}

std::filesystem::path make_temp_dir(const std::string& tag) {
  static std::atomic<uint64_t> counter{0};
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() /
      ("cfrank_" + tag + "_" + std::to_string(::getpid()) + "_" +
       std::to_string(counter.fetch_add(1)));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int run_cli(const std::string& command_line) {
  const int status = std::system(command_line.c_str());
  if (status == -1) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace fixtures
