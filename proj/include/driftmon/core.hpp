#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace driftmon {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ── Domain types ──────────────────────────────────────────────────────────

/// One environment transition (s, a, s', terminated).
struct Transition {
  Vec state;
  Vec action;
  Vec next_state;
  bool terminated = false;
};

/// Ordered transitions from one episode. At most the last transition may be
/// terminated.
struct Trajectory {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
};

inline bool trajectory_is_valid(const Trajectory& traj) {
  if (traj.empty()) return false;
  const Eigen::Index dim = traj.transitions.front().state.size();
  if (dim <= 0) return false;
  for (std::size_t i = 0; i < traj.transitions.size(); ++i) {
    const Transition& tr = traj.transitions[i];
    if (tr.state.size() != dim || tr.next_state.size() != dim) return false;
    if (tr.terminated && i + 1 != traj.transitions.size()) return false;
  }
  return true;
}

// ── Binomial statistics ───────────────────────────────────────────────────

/// Inverse standard normal CDF. Acklam's rational approximation refined with
/// one Halley step; accurate to ~1e-15 over (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");

  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};

  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement against the exact CDF.
  const double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 0.3989422804014326779;
  double e = 0.5 * std::erfc(-x * inv_sqrt2) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  (void)inv_sqrt2pi;
  return x;
}

/// z for a central confidence level; 0.95 is pinned to 1.959964 so that all
/// reported intervals use one documented constant.
inline double confidence_z(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw std::invalid_argument("confidence must be in (0,1)");
  if (confidence == 0.95) return 1.959964;
  return normal_quantile(0.5 + 0.5 * confidence);
}

/// Wilson score interval for a binomial proportion (uncorrected).
inline std::pair<double, double> wilson_interval(std::int64_t successes,
                                                 std::int64_t trials,
                                                 double confidence = 0.95) {
  if (trials < 1)
    throw std::invalid_argument("wilson_interval: trials must be >= 1");
  if (successes < 0 || successes > trials)
    throw std::invalid_argument(
        "wilson_interval: successes must be in [0, trials]");
  const double z = confidence_z(confidence);
  const double n = static_cast<double>(trials);
  const double phat = static_cast<double>(successes) / n;
  const double z2n = z * z / n;
  const double center = (phat + 0.5 * z2n) / (1.0 + z2n);
  const double half = z / (1.0 + z2n) *
                      std::sqrt(phat * (1.0 - phat) / n + 0.25 * z2n / n);
  double low = center - half;
  double high = center + half;
  if (successes == 0) low = 0.0;
  if (successes == trials) high = 1.0;
  low = std::max(0.0, low);
  high = std::min(1.0, high);
  return {low, high};
}

/// Binomial proportion with its Wilson interval.
struct BinomialEstimate {
  std::int64_t successes = 0;
  std::int64_t trials = 0;
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;

  static BinomialEstimate from_counts(std::int64_t successes,
                                      std::int64_t trials,
                                      double confidence = 0.95) {
    BinomialEstimate est;
    est.successes = successes;
    est.trials = trials;
    est.rate = static_cast<double>(successes) / static_cast<double>(trials);
    auto [lo, hi] = wilson_interval(successes, trials, confidence);
    est.ci_low = lo;
    est.ci_high = hi;
    return est;
  }
};

// ── Deterministic splittable RNG ──────────────────────────────────────────

namespace detail {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}
}  // namespace detail

/// Counter-based stream RNG. A stream is identified by a key derived from a
/// master seed plus a derivation path (environment / seed / episode indices);
/// output is a pure function of (key, counter), so independently derived
/// streams can be consumed in any order, on any thread, with identical
/// results.
class RngStream {
 public:
  RngStream() : key_(detail::mix64(detail::kGamma)) {}
  explicit RngStream(std::uint64_t seed)
      : key_(detail::mix64(seed + detail::kGamma)) {}

  /// Child stream; independent of this stream's position.
  RngStream derive(std::uint64_t id) const {
    RngStream child;
    child.key_ = detail::mix64(key_ ^ detail::mix64((id + 1) * detail::kGamma));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() {
    std::uint64_t v = detail::mix64(key_ + (++counter_) * detail::kGamma);
    return v;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via the Marsaglia polar method.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  Vec gaussian_vector(Eigen::Index n) {
    Vec out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = next_gaussian();
    return out;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Stream for (master seed, env id, seed index, episode index); sweeps key
/// episodes this way so parallel execution order cannot change results.
inline RngStream episode_stream(std::uint64_t master_seed, std::uint64_t env,
                                std::uint64_t seed_idx,
                                std::uint64_t episode_idx) {
  return RngStream(master_seed).derive(env).derive(seed_idx).derive(
      episode_idx);
}

/// Stable 64-bit FNV-1a string hash; used to key RNG streams and manifests by
/// name rather than by position.
inline std::uint64_t stable_hash64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ── Small statistics helpers ──────────────────────────────────────────────

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of: empty series");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Population (divide-by-n) standard deviation.
inline double population_std(const std::vector<double>& xs) {
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

/// Percentile by linear interpolation between closest order statistics,
/// computed on an already sorted series. p in [0, 100].
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty())
    throw std::invalid_argument("percentile_sorted: empty series");
  if (!(p >= 0.0 && p <= 100.0))
    throw std::invalid_argument("percentile_sorted: p must be in [0,100]");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = (static_cast<double>(n) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace driftmon
