// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cfrank/config.hpp"
#include "cfrank/error.hpp"
#include "cfrank/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual passage attribution and robustness toolkit"};
  app.fallthrough(true);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<size_t> jobs;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "TOML or JSON pipeline config")->type_name("PATH");
  app.add_option("--seed", seed, "Override the configured seed")->type_name("INT");
  app.add_option("--jobs", jobs, "Worker count; 0 uses every logical core")->type_name("INT");
  app.add_option("--out", out_dir, "Output directory")->type_name("DIR");

  app.add_subcommand("segment", "Slice documents into windows and locate gold passages");
  app.add_subcommand("stats", "Write segmentation statistics only");
  app.add_subcommand("attribute", "Per-passage attribution for each (query, document) pair");
  app.add_subcommand("counterfactual",
                     "Construct partial, full, adversarial and per-passage counterfactuals");
  app.add_subcommand("attack", "Attack the gold documents and report ranking degradation");
  app.add_subcommand("loss-check", "Evaluate the contrastive loss and verify gradients");
  app.add_subcommand("eval", "Score attribution quality and ranking metrics");
  app.add_subcommand("pipeline", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cfrank::kExitOk : cfrank::kExitValidation;
  }

  try {
    cfrank::PipelineConfig config;
    if (!config_path.empty()) config = cfrank::load_pipeline_config(config_path);
    if (seed) config.seed = *seed;
    if (jobs) config.jobs = *jobs;
    if (out_dir) config.out_dir = *out_dir;
    return cfrank::run_command(app.get_subcommands().front()->get_name(), config);
  } catch (const cfrank::ValidationError& e) {
    std::cerr << "[cfrank] error: " << e.what() << '\n';
    return cfrank::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "[cfrank] error: " << e.what() << '\n';
    return cfrank::kExitRuntime;
  }
}
