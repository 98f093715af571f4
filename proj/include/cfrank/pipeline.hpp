// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cfrank/attribution.hpp"
#include "cfrank/config.hpp"
#include "cfrank/contrastive.hpp"
#include "cfrank/corpus.hpp"
#include "cfrank/counterfactual.hpp"
#include "cfrank/scoring.hpp"

namespace cfrank {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// A scorer plus whatever backing state it needs to stay alive (the
/// reference scorer borrows its encoder).
struct ScorerHandle {
  std::unique_ptr<ReferenceEncoder> encoder;
  std::unique_ptr<Scorer> scorer;
};

/// Builds the scorer named by the config over the loaded documents.
ScorerHandle make_scorer(const PipelineConfig& config, const std::vector<Document>& docs);

/// One-line JSON encodings used by the command outputs; exposed so tests can
/// pin the wire format.
std::string attribution_json_line(const AttributionResult& result);
std::string counterfactual_json_line(const CounterfactualDoc& doc);

/// Recasts a best-of-K adversarial result as a counterfactual record with
/// per-position replacement provenance.
CounterfactualDoc adversarial_record(const Document& doc, const AdversarialDoc& adv, uint64_t seed);

// Commands return process exit codes. Validation failures surface as
// ValidationError; run_command maps exceptions to codes.
int cmd_segment(const PipelineConfig& config);
int cmd_stats(const PipelineConfig& config);
int cmd_attribute(const PipelineConfig& config);
int cmd_counterfactual(const PipelineConfig& config);
int cmd_attack(const PipelineConfig& config);
int cmd_loss_check(const PipelineConfig& config);
int cmd_eval(const PipelineConfig& config);
int cmd_pipeline(const PipelineConfig& config);

/// Dispatches a subcommand by name and maps exceptions to exit codes:
/// 0 ok, 2 validation, 3 runtime/scorer.
int run_command(const std::string& name, const PipelineConfig& config);

}  // namespace cfrank
