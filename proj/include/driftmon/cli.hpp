#pragma once

#include <string>

#include "driftmon/config.hpp"

namespace driftmon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsageError = 2;

/// Rolls out training data, trains one model per (env, capacity), writes
/// model files and a training report. Divergence of one model is reported in
/// the report without aborting the others.
int cmd_train(const ExperimentConfig& config);

/// Runs the configured sweep resumably: per-condition record chunks land in
/// <out>/records_chunks and are skipped on rerun; the final records.ndjson
/// and summary.csv are rebuilt deterministically from all chunks.
int cmd_sweep(const ExperimentConfig& config);

/// Produces thresholds/powerlaw/sdt/regimes/psd CSVs plus analysis.json
/// under <out>/analysis. Analyses lacking data are skipped with a reason.
int cmd_analyze(const ExperimentConfig& config,
                const std::string& records_path);

/// Renders SVG figures from <analysis_dir>/analysis.json into out_dir.
int cmd_report(const std::string& analysis_dir, const std::string& out_dir);

/// Full argv entry point (subcommands train/sweep/analyze/report).
int run_cli(int argc, const char* const* argv);

}  // namespace driftmon
