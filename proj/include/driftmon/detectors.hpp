#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "driftmon/worldmodel.hpp"

namespace driftmon {

enum class DetectorFamily {
  doubt_index,
  variance,
  percentile,
  cusum,
  page_hinkley
};

std::string to_string(DetectorFamily f);

/// One detector configuration. Only the fields of its family are read.
/// CUSUM / Page-Hinkley parameters are expressed in units of the calibrated
/// baseline sigma.
struct DetectorConfig {
  DetectorFamily family = DetectorFamily::doubt_index;

  // Doubt Index
  double z = 3.0;
  int W = 5;  // consecutive-step window (also the percentile window)
  double ema_alpha = 0.1;

  // Variance detector
  int V = 50;
  double k = 2.0;
  int C = 5;

  // Percentile detector
  double p = 99.0;

  // Change-point baselines (sigma units)
  double cusum_slack = 0.5;
  double cusum_h = 5.0;
  double ph_delta = 0.5;
  double ph_lambda = 5.0;

  /// Canonical string id, e.g. "di_z3.0_w5", "var_k2", "pct_p99".
  std::string id() const;

  static DetectorConfig doubt_index(double z, int W, double ema_alpha = 0.1);
  static DetectorConfig variance(double k, int V = 50, int C = 5);
  static DetectorConfig percentile(double p, int W = 5);
  static DetectorConfig cusum(double slack = 0.5, double h = 5.0);
  static DetectorConfig page_hinkley(double delta = 0.5, double lambda = 5.0);

  /// Parses a canonical id back into a config.
  static DetectorConfig from_id(const std::string& id);
};

/// Streaming state. Single-owner; one instance per (episode, config).
/// Steps are numbered from 1; calibration occupies steps 1..calibration_len,
/// so the first streamed sample is step calibration_len + 1 and fire_step is
/// always greater than the calibration window.
struct DetectorState {
  DetectorConfig config;
  BaselineStats baseline;
  double sigma_eff = 0.0;  // baseline.std or the degenerate-sigma floor
  bool degenerate_sigma = false;

  // family-specific running state
  double ema = 0.0;
  std::deque<double> window;      // last V errors (variance family)
  double var_threshold = 0.0;     // baseline var + k * std(window variances)
  double pct_threshold = 0.0;     // p-th percentile of the baseline
  int consecutive = 0;
  double cusum_s = 0.0;
  double ph_sum = 0.0;
  double ph_min = 0.0;

  bool fired = false;
  std::optional<std::int64_t> fire_step;
  std::int64_t step = 0;  // last processed step (1-based, absolute)
};

/// Builds a calibrated state from the pre-drift baseline PE series.
/// Requires length >= 30 and, for the variance family, >= V. A zero baseline
/// sigma is replaced by sigma_floor = 1e-9 * max(1, |mean|) and flagged.
DetectorState calibrate(const DetectorConfig& config,
                        const std::vector<double>& baseline_pe);

/// Family step functions; each consumes one PE sample and reports whether the
/// detector fired on this step. A fired detector stays fired; subsequent
/// steps return false.
bool di_step(DetectorState& state, double e);
bool variance_step(DetectorState& state, double e);
bool percentile_step(DetectorState& state, double e);
bool cusum_step(DetectorState& state, double e);
bool page_hinkley_step(DetectorState& state, double e);

/// Dispatches on the state's family.
bool detector_step(DetectorState& state, double e);

struct DetectionOutcome {
  bool fired = false;
  std::optional<std::int64_t> fire_step;  // 1-based absolute step
};

/// Calibrates on the first `calibration_window` samples, then streams the
/// rest; reports the first fire step.
DetectionOutcome detect_episode(const DetectorConfig& config,
                                const std::vector<double>& pe,
                                std::size_t calibration_window);

}  // namespace driftmon
