#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "driftmon/core.hpp"
#include "driftmon/experiment.hpp"

namespace driftmon {

// ── Threshold extraction ──────────────────────────────────────────────────

enum class FitMethod { logistic_fit, interpolated_crossing };
enum class Censoring { none, never_detects, always_detects };

/// Detection threshold from a detection-rate curve. The model is
/// r(eps) = floor + range * sigmoid(slope * (log10 eps - log10 eps_star)),
/// with floor and range absorbing baseline FPR and saturation ceiling;
/// eps_star is the midpoint-of-range crossing.
struct ThresholdFit {
  double epsilon_star = 0.0;  // 0 when censored
  double slope = 0.0;
  double r_squared = 0.0;
  double floor = 0.0;
  double ceiling = 1.0;
  FitMethod method = FitMethod::logistic_fit;
  Censoring censoring = Censoring::none;
};

/// Least-squares sigmoid fit over (epsilon, detection-rate) points.
/// Requires >= 5 distinct epsilons spanning at least one decade. Censors
/// (rather than fits) when the curve never crosses 0.5.
ThresholdFit fit_sigmoid(
    const std::vector<std::pair<double, BinomialEstimate>>& points);

// ── Power law ─────────────────────────────────────────────────────────────

struct PowerLawRow {
  double z = 0.0;
  double W = 0.0;
  double epsilon_star = 0.0;
};

/// log10(eps*) = a + alpha log10(z) + beta log10(W), ordinary least squares.
struct PowerLawFit {
  double intercept = 0.0;
  double alpha = 0.0;  // z exponent
  double beta = 0.0;   // W exponent
  double r_squared = 0.0;
  int rows = 0;
};

/// Requires >= 4 rows, all W > 1 (single-step detectors are rejected), all
/// eps* positive, and at least two distinct z and two distinct W values.
PowerLawFit fit_power_law(const std::vector<PowerLawRow>& rows);

// ── FPR correction ────────────────────────────────────────────────────────

/// rate_corrected = max(0, (raw - fpr) / (1 - fpr)); fpr must be in [0, 1).
double fpr_correct(double raw_rate, double fpr);

// ── SDT operating points ──────────────────────────────────────────────────

struct SdtPoint {
  std::string detector_id;
  double fpr = 0.0;            // detection rate at eps_baseline
  double detection_rate = 0.0; // detection rate at eps_ref
};

/// One point per detector config for the given (env, profile, capacity)
/// slice of a sweep. Throws if either grid value is absent, listing what is
/// missing.
std::vector<SdtPoint> sdt_points(const SweepResult& sweep,
                                 const std::string& env, DriftKind profile,
                                 const std::string& capacity,
                                 double eps_baseline = 1e-4,
                                 double eps_ref = 3e-3);

// ── Spectral analysis ─────────────────────────────────────────────────────

/// In-place radix-2 decimation-in-time FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& x);

/// Total non-DC spectral power ratio condition/baseline over mean-removed,
/// rectangular-windowed segments. The window is the trailing L samples of
/// each series with L = min(512, largest power of two fitting both).
/// Requires both series >= 256 samples.
double psd_ratio(const std::vector<double>& pe_baseline,
                 const std::vector<double>& pe_condition);

// ── Survival-gap regimes ──────────────────────────────────────────────────

enum class RegimeLabel {
  sub_threshold,
  detectable,
  collapse_before_awareness,
  overwhelming
};

std::string to_string(RegimeLabel label);

/// Per-(epsilon) classification for one (env, detector, capacity) group.
struct RegimeRow {
  double epsilon = 0.0;
  int episodes = 0;
  double detection_rate = 0.0;
  double collapse_rate = 0.0;
  std::optional<double> median_gap;        // collapse - fire, both present
  std::optional<double> median_fire;       // over fired episodes
  std::optional<double> median_collapse;   // over collapsed episodes
  double mean_pe_slope = 0.0;              // post-onset PE slope diagnostic
  std::optional<RegimeLabel> label;
};

/// Applies the regime rules per epsilon. `records` must all belong to one
/// (env, detector, capacity) group; each epsilon needs >= 20 episodes.
/// Rule precedence: collapse-before-awareness, overwhelming, detectable,
/// sub-threshold; conditions matching none stay unlabeled.
std::vector<RegimeRow> classify_regimes(
    const std::vector<EpisodeRecord>& records, const ThresholdFit& fit);

}  // namespace driftmon
