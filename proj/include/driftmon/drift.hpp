#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftmon/core.hpp"

namespace driftmon {

enum class DriftKind { none, linear, sinusoidal };

inline std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::none: return "none";
    case DriftKind::linear: return "linear";
    case DriftKind::sinusoidal: return "sinusoidal";
  }
  return "none";
}

inline DriftKind drift_kind_from_string(const std::string& s) {
  if (s == "none") return DriftKind::none;
  if (s == "linear") return DriftKind::linear;
  if (s == "sinusoidal") return DriftKind::sinusoidal;
  throw std::invalid_argument("unknown drift kind: " + s);
}

/// Additive observation corruption: s̃_t = s_t + g(ε, t − t0) · d, where d is
/// a unit vector supported on `dims` and g is the profile shape. The sinusoid
/// starts at phase 0 at onset so the pre-onset boundary is continuous.
struct DriftProfile {
  DriftKind kind = DriftKind::none;
  double epsilon = 0.0;
  std::int64_t onset = 0;
  double frequency = 0.01;  // cycles per step, sinusoidal only
  std::vector<int> dims;
  std::vector<double> direction;  // weights over dims, unit 2-norm

  static DriftProfile make(DriftKind kind, double epsilon, std::int64_t onset,
                           std::vector<int> dims,
                           std::vector<double> direction,
                           double frequency = 0.01) {
    if (epsilon < 0.0)
      throw std::invalid_argument("DriftProfile: epsilon must be >= 0");
    if (onset < 0)
      throw std::invalid_argument("DriftProfile: onset must be >= 0");
    if (kind != DriftKind::none) {
      if (dims.size() != direction.size() || dims.empty())
        throw std::invalid_argument(
            "DriftProfile: dims and direction must be non-empty and equal "
            "length");
      double norm2 = 0.0;
      for (double w : direction) norm2 += w * w;
      if (std::abs(std::sqrt(norm2) - 1.0) > 1e-12)
        throw std::invalid_argument(
            "DriftProfile: direction must have unit 2-norm");
    }
    DriftProfile p;
    p.kind = kind;
    p.epsilon = epsilon;
    p.onset = onset;
    p.frequency = frequency;
    p.dims = std::move(dims);
    p.direction = std::move(direction);
    return p;
  }

  /// Uniform unit direction over the given dims.
  static DriftProfile uniform(DriftKind kind, double epsilon,
                              std::int64_t onset, std::vector<int> dims,
                              double frequency = 0.01) {
    const double w = 1.0 / std::sqrt(static_cast<double>(dims.size()));
    std::vector<double> direction(dims.size(), w);
    return make(kind, epsilon, onset, std::move(dims), std::move(direction),
                frequency);
  }

  static DriftProfile none_profile() { return DriftProfile{}; }
};

/// g(ε, t − t0); zero before onset.
inline double drift_offset(const DriftProfile& profile, std::int64_t t) {
  if (profile.kind == DriftKind::none || t < profile.onset) return 0.0;
  const double dt = static_cast<double>(t - profile.onset);
  switch (profile.kind) {
    case DriftKind::linear:
      return profile.epsilon * dt;
    case DriftKind::sinusoidal:
      return profile.epsilon * std::sin(2.0 * M_PI * profile.frequency * dt);
    default:
      return 0.0;
  }
}

/// obs + g·d. Dimensions outside the profile's support are left untouched
/// (bit-identical, not merely +0.0).
inline Vec apply_drift(const Vec& obs, const DriftProfile& profile,
                       std::int64_t t) {
  Vec out = obs;
  if (profile.kind == DriftKind::none) return out;
  for (int dim : profile.dims)
    if (dim < 0 || dim >= obs.size())
      throw std::invalid_argument("apply_drift: drift dim out of range");
  const double g = drift_offset(profile, t);
  if (g == 0.0) return out;
  for (std::size_t i = 0; i < profile.dims.size(); ++i)
    out[profile.dims[i]] += g * profile.direction[i];
  return out;
}

/// The 16-intensity sweep grid: log-spaced over [1e-4, 0.5] with finer
/// resolution through the 1e-3..1e-2 region where thresholds typically fall.
inline std::vector<double> default_epsilon_grid() {
  return {1e-4, 3e-4,  5e-4, 1e-3, 1.5e-3, 2e-3, 3e-3, 4e-3,
          5e-3, 7e-3, 0.01, 0.02, 0.05,   0.1,  0.2,  0.5};
}

}  // namespace driftmon
