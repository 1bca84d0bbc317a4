#include "driftmon/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace driftmon {

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

struct SigmoidParams {
  double floor = 0.0;
  double range = 1.0;
  double slope = 4.0;
  double x0 = 0.0;  // log10(eps*)
};

double sse_of(const SigmoidParams& p, const std::vector<double>& xs,
              const std::vector<double>& rs) {
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double g = sigmoid(p.slope * (xs[i] - p.x0));
    const double d = p.floor + p.range * g - rs[i];
    sse += d * d;
  }
  return sse;
}

/// For fixed (slope, x0) the model is linear in (floor, range); solve the
/// 2x2 normal equations and clamp into [0,1].
void solve_affine(const std::vector<double>& xs, const std::vector<double>& rs,
                  SigmoidParams& p) {
  double sg = 0.0, sgg = 0.0, sr = 0.0, sgr = 0.0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double g = sigmoid(p.slope * (xs[i] - p.x0));
    sg += g;
    sgg += g * g;
    sr += rs[i];
    sgr += g * rs[i];
  }
  const double det = n * sgg - sg * sg;
  if (std::abs(det) < 1e-12) return;
  double floor = (sgg * sr - sg * sgr) / det;
  double range = (n * sgr - sg * sr) / det;
  p.floor = std::clamp(floor, 0.0, 1.0);
  p.range = std::clamp(range, 1e-3, 1.0);
}

/// Levenberg-Marquardt refinement of all four parameters.
void refine(const std::vector<double>& xs, const std::vector<double>& rs,
            SigmoidParams& p, double x_lo, double x_hi) {
  double lambda = 1e-3;
  double sse = sse_of(p, xs, rs);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double g = sigmoid(p.slope * (xs[i] - p.x0));
      const double resid = p.floor + p.range * g - rs[i];
      const double gp = g * (1.0 - g);
      Eigen::Vector4d jac(1.0, g, p.range * gp * (xs[i] - p.x0),
                          -p.range * gp * p.slope);
      jtj += jac * jac.transpose();
      jtr += jac * resid;
    }
    Eigen::Matrix4d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
    Eigen::Vector4d step = damped.ldlt().solve(jtr);
    if (!step.allFinite()) break;
    SigmoidParams trial = p;
    trial.floor = std::clamp(p.floor - step[0], 0.0, 1.0);
    trial.range = std::clamp(p.range - step[1], 1e-3, 1.0);
    trial.slope = std::clamp(p.slope - step[2], 0.05, 2000.0);
    trial.x0 = std::clamp(p.x0 - step[3], x_lo - 1.0, x_hi + 1.0);
    const double trial_sse = sse_of(trial, xs, rs);
    if (trial_sse < sse) {
      p = trial;
      if (sse - trial_sse < 1e-14) {
        sse = trial_sse;
        break;
      }
      sse = trial_sse;
      lambda = std::max(lambda * 0.5, 1e-9);
    } else {
      lambda *= 4.0;
      if (lambda > 1e9) break;
    }
  }
}

}  // namespace

ThresholdFit fit_sigmoid(
    const std::vector<std::pair<double, BinomialEstimate>>& points) {
  std::set<double> distinct;
  for (const auto& [eps, est] : points) {
    if (eps <= 0.0)
      throw std::invalid_argument("fit_sigmoid: epsilon must be positive");
    distinct.insert(eps);
  }
  if (distinct.size() < 5)
    throw std::invalid_argument(
        "fit_sigmoid: need at least 5 distinct epsilon values");
  if (*distinct.rbegin() / *distinct.begin() < 10.0)
    throw std::invalid_argument(
        "fit_sigmoid: epsilon grid must span at least one decade");

  std::vector<std::pair<double, double>> data;  // (log10 eps, rate)
  for (const auto& [eps, est] : points) data.emplace_back(std::log10(eps), est.rate);
  std::sort(data.begin(), data.end());
  std::vector<double> xs, rs;
  for (auto& [x, r] : data) {
    xs.push_back(x);
    rs.push_back(r);
  }

  ThresholdFit fit;
  const double rmin = *std::min_element(rs.begin(), rs.end());
  const double rmax = *std::max_element(rs.begin(), rs.end());
  fit.floor = rmin;
  fit.ceiling = rmax;
  if (rmax < 0.5 || (rmin == rmax && rmax <= 0.5)) {
    fit.censoring = Censoring::never_detects;
    return fit;
  }
  if (rmin > 0.5 || (rmin == rmax && rmin > 0.5)) {
    fit.censoring = Censoring::always_detects;
    return fit;
  }

  // Coarse grid over (slope, x0) with floor/range solved linearly.
  const double x_lo = xs.front(), x_hi = xs.back();
  SigmoidParams best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int si = 0; si < 24; ++si) {
    const double s = 0.5 * std::pow(80.0 / 0.5, si / 23.0);
    for (int xi = 0; xi <= 72; ++xi) {
      SigmoidParams p;
      p.slope = s;
      p.x0 = x_lo + (x_hi - x_lo) * xi / 72.0;
      p.floor = rmin;
      p.range = std::max(1e-3, rmax - rmin);
      solve_affine(xs, rs, p);
      const double sse = sse_of(p, xs, rs);
      if (sse < best_sse) {
        best_sse = sse;
        best = p;
      }
    }
  }
  refine(xs, rs, best, x_lo, x_hi);

  double sst = 0.0;
  const double rbar = mean_of(rs);
  for (double r : rs) sst += (r - rbar) * (r - rbar);
  const double sse = sse_of(best, xs, rs);

  const bool fit_ok = std::isfinite(sse) && best.range > 2e-3;
  if (fit_ok) {
    fit.method = FitMethod::logistic_fit;
    fit.epsilon_star = std::pow(10.0, best.x0);
    fit.slope = best.slope;
    fit.floor = best.floor;
    fit.ceiling = std::min(1.0, best.floor + best.range);
    fit.r_squared = sst > 0.0 ? std::max(0.0, 1.0 - sse / sst) : 1.0;
    return fit;
  }

  // Monotone-interpolation fallback: first bracket of the absolute 0.5
  // crossing.
  fit.method = FitMethod::interpolated_crossing;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double a = rs[i] - 0.5, b = rs[i + 1] - 0.5;
    if (a == 0.0 && b == 0.0) {
      fit.epsilon_star = std::pow(10.0, 0.5 * (xs[i] + xs[i + 1]));
      break;
    }
    if (a * b <= 0.0 && a != b) {
      const double t = -a / (b - a);
      fit.epsilon_star = std::pow(10.0, xs[i] + t * (xs[i + 1] - xs[i]));
      break;
    }
  }
  fit.slope = 0.0;
  fit.r_squared = 0.0;
  fit.floor = rmin;
  fit.ceiling = rmax;
  return fit;
}

// ── Power law ─────────────────────────────────────────────────────────────

PowerLawFit fit_power_law(const std::vector<PowerLawRow>& rows) {
  if (rows.size() < 4)
    throw std::invalid_argument(
        "fit_power_law: need at least 4 rows, got " +
        std::to_string(rows.size()));
  std::set<double> zs, ws;
  for (const auto& row : rows) {
    if (row.W <= 1.0)
      throw std::invalid_argument(
          "fit_power_law: rows with W <= 1 are excluded (single-step "
          "detector); remove them before fitting");
    if (!(row.epsilon_star > 0.0))
      throw std::invalid_argument(
          "fit_power_law: epsilon_star must be positive (censored thresholds "
          "cannot be fit)");
    zs.insert(row.z);
    ws.insert(row.W);
  }
  if (zs.size() < 2 || ws.size() < 2)
    throw std::invalid_argument(
        "fit_power_law: rank-deficient design (need >= 2 distinct z and W)");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Mat design(n, 3);
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::log10(rows[static_cast<std::size_t>(i)].z);
    design(i, 2) = std::log10(rows[static_cast<std::size_t>(i)].W);
    y[i] = std::log10(rows[static_cast<std::size_t>(i)].epsilon_star);
  }
  Vec coef = design.colPivHouseholderQr().solve(y);
  Vec resid = design * coef - y;
  const double sse = resid.squaredNorm();
  const double ybar = y.mean();
  const double sst = (y.array() - ybar).square().sum();

  PowerLawFit fit;
  fit.intercept = coef[0];
  fit.alpha = coef[1];
  fit.beta = coef[2];
  fit.rows = static_cast<int>(rows.size());
  fit.r_squared = sst > 0.0 ? 1.0 - sse / sst : (sse < 1e-20 ? 1.0 : 0.0);
  return fit;
}

// ── FPR correction ────────────────────────────────────────────────────────

double fpr_correct(double raw_rate, double fpr) {
  if (!(fpr >= 0.0 && fpr < 1.0))
    throw std::invalid_argument("fpr_correct: fpr must be in [0,1)");
  if (!(raw_rate >= 0.0 && raw_rate <= 1.0))
    throw std::invalid_argument("fpr_correct: raw_rate must be in [0,1]");
  return std::max(0.0, (raw_rate - fpr) / (1.0 - fpr));
}

// ── SDT points ────────────────────────────────────────────────────────────

namespace {

bool eps_match(double a, double b) {
  return std::abs(a - b) <= 1e-12 + 1e-9 * std::abs(b);
}

}  // namespace

std::vector<SdtPoint> sdt_points(const SweepResult& sweep,
                                 const std::string& env, DriftKind profile,
                                 const std::string& capacity,
                                 double eps_baseline, double eps_ref) {
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>>
      by_detector;
  for (const auto& [key, s] : sweep.summary) {
    if (key.env != env || key.profile != profile || key.capacity != capacity)
      continue;
    auto& entry = by_detector[key.detector_id];
    if (eps_match(key.epsilon, eps_baseline)) entry.first = s.detection.rate;
    if (eps_match(key.epsilon, eps_ref)) entry.second = s.detection.rate;
  }
  if (by_detector.empty())
    throw std::invalid_argument("sdt_points: no conditions match " + env +
                                "/" + capacity);
  std::vector<std::string> missing;
  std::vector<SdtPoint> out;
  for (const auto& [id, rates] : by_detector) {
    if (!rates.first)
      missing.push_back(id + ": eps_baseline=" + std::to_string(eps_baseline));
    if (!rates.second)
      missing.push_back(id + ": eps_ref=" + std::to_string(eps_ref));
    if (rates.first && rates.second)
      out.push_back({id, *rates.first, *rates.second});
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "sdt_points: required grid values absent:";
    for (const auto& m : missing) msg << ' ' << m << ';';
    throw std::invalid_argument(msg.str());
  }
  return out;
}

// ── Spectral analysis ─────────────────────────────────────────────────────

void fft_radix2(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

namespace {

/// Total non-DC power of the trailing `win` samples, mean-removed.
double segment_power(const std::vector<double>& series, std::size_t win) {
  std::vector<std::complex<double>> buf(win);
  const std::size_t offset = series.size() - win;
  double mean = 0.0;
  for (std::size_t i = 0; i < win; ++i) mean += series[offset + i];
  mean /= static_cast<double>(win);
  for (std::size_t i = 0; i < win; ++i)
    buf[i] = std::complex<double>(series[offset + i] - mean, 0.0);
  fft_radix2(buf);
  double power = 0.0;
  for (std::size_t k = 1; k < win; ++k) power += std::norm(buf[k]);
  return power;
}

}  // namespace

double psd_ratio(const std::vector<double>& pe_baseline,
                 const std::vector<double>& pe_condition) {
  if (pe_baseline.size() < 256 || pe_condition.size() < 256)
    throw std::invalid_argument("psd_ratio: both series must have >= 256 "
                                "samples");
  std::size_t win = 512;
  const std::size_t cap = std::min(pe_baseline.size(), pe_condition.size());
  while (win > cap) win >>= 1;
  const double pb = segment_power(pe_baseline, win);
  const double pc = segment_power(pe_condition, win);
  if (pb == 0.0 && pc == 0.0) return 1.0;
  if (pb == 0.0) return std::numeric_limits<double>::infinity();
  return pc / pb;
}

// ── Regimes ───────────────────────────────────────────────────────────────

std::string to_string(RegimeLabel label) {
  switch (label) {
    case RegimeLabel::sub_threshold: return "sub_threshold";
    case RegimeLabel::detectable: return "detectable";
    case RegimeLabel::collapse_before_awareness:
      return "collapse_before_awareness";
    case RegimeLabel::overwhelming: return "overwhelming";
  }
  return "sub_threshold";
}

namespace {

std::optional<double> median_of(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// OLS slope of the post-onset portion of a PE trace against step index.
std::optional<double> trace_slope(const EpisodeRecord& rec) {
  if (rec.pe_trace.empty()) return std::nullopt;
  const auto onset = static_cast<std::size_t>(rec.onset);
  if (rec.pe_trace.size() <= onset + 2) return std::nullopt;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const std::size_t n = rec.pe_trace.size() - onset;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    const double y = rec.pe_trace[onset + i];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  const double denom = dn * sxx - sx * sx;
  if (denom == 0.0) return std::nullopt;
  return (dn * sxy - sx * sy) / denom;
}

}  // namespace

std::vector<RegimeRow> classify_regimes(
    const std::vector<EpisodeRecord>& records, const ThresholdFit& fit) {
  if (records.empty())
    throw std::invalid_argument("classify_regimes: no records");
  const std::string& env = records.front().env;
  const std::string& detector = records.front().detector_id;
  const std::string& capacity = records.front().capacity;
  std::map<double, std::vector<const EpisodeRecord*>> by_eps;
  for (const auto& rec : records) {
    if (rec.env != env || rec.detector_id != detector ||
        rec.capacity != capacity)
      throw std::invalid_argument(
          "classify_regimes: records span multiple (env, detector, capacity) "
          "groups");
    by_eps[rec.epsilon].push_back(&rec);
  }

  std::vector<RegimeRow> rows;
  for (const auto& [eps, recs] : by_eps) {
    if (recs.size() < 20)
      throw std::invalid_argument(
          "classify_regimes: insufficient episodes at epsilon=" +
          std::to_string(eps) + " (" + std::to_string(recs.size()) + " < 20)");
    RegimeRow row;
    row.epsilon = eps;
    row.episodes = static_cast<int>(recs.size());
    int fired = 0, collapsed = 0;
    std::vector<double> gaps, fires, collapses, slopes;
    for (const EpisodeRecord* r : recs) {
      if (r->fired) {
        ++fired;
        fires.push_back(static_cast<double>(*r->fire_step));
      }
      if (r->collapse_step) {
        ++collapsed;
        collapses.push_back(static_cast<double>(*r->collapse_step));
      }
      if (r->fired && r->collapse_step)
        gaps.push_back(static_cast<double>(*r->collapse_step - *r->fire_step));
      if (auto s = trace_slope(*r)) slopes.push_back(*s);
    }
    row.detection_rate =
        static_cast<double>(fired) / static_cast<double>(recs.size());
    row.collapse_rate =
        static_cast<double>(collapsed) / static_cast<double>(recs.size());
    row.median_gap = median_of(gaps);
    row.median_fire = median_of(fires);
    row.median_collapse = median_of(collapses);
    row.mean_pe_slope = slopes.empty() ? 0.0 : mean_of(slopes);

    const bool below_star =
        fit.censoring == Censoring::never_detects ||
        (fit.censoring == Censoring::none && eps < fit.epsilon_star);
    if (row.collapse_rate >= 0.8 && row.detection_rate < 0.2) {
      row.label = RegimeLabel::collapse_before_awareness;
    } else if (row.detection_rate >= 0.8 && row.median_fire &&
               row.median_collapse && *row.median_fire < *row.median_collapse) {
      row.label = RegimeLabel::overwhelming;
    } else if (row.detection_rate >= 0.5 &&
               ((row.median_gap && *row.median_gap > 0.0) || collapsed == 0)) {
      row.label = RegimeLabel::detectable;
    } else if (row.detection_rate < 0.1 && below_star) {
      row.label = RegimeLabel::sub_threshold;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace driftmon
