#include "driftmon/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace driftmon {

std::string to_string(DetectorFamily f) {
  switch (f) {
    case DetectorFamily::doubt_index: return "doubt_index";
    case DetectorFamily::variance: return "variance";
    case DetectorFamily::percentile: return "percentile";
    case DetectorFamily::cusum: return "cusum";
    case DetectorFamily::page_hinkley: return "page_hinkley";
  }
  return "doubt_index";
}

namespace {

/// "2" for whole numbers, "2.5" otherwise.
std::string fmt_short(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e9) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Always one decimal, as in "di_z3.0_w5".
std::string fmt_fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string DetectorConfig::id() const {
  switch (family) {
    case DetectorFamily::doubt_index: {
      std::string s = "di_z" + fmt_fixed1(z) + "_w" + std::to_string(W);
      if (ema_alpha != 0.1) s += "_a" + fmt_short(ema_alpha);
      return s;
    }
    case DetectorFamily::variance: {
      std::string s = "var_k" + fmt_short(k);
      if (V != 50) s += "_v" + std::to_string(V);
      if (C != 5) s += "_c" + std::to_string(C);
      return s;
    }
    case DetectorFamily::percentile: {
      std::string s = "pct_p" + fmt_short(p);
      if (W != 5) s += "_w" + std::to_string(W);
      return s;
    }
    case DetectorFamily::cusum:
      return "cusum_s" + fmt_short(cusum_slack) + "_h" + fmt_short(cusum_h);
    case DetectorFamily::page_hinkley:
      return "ph_d" + fmt_short(ph_delta) + "_l" + fmt_short(ph_lambda);
  }
  return "unknown";
}

DetectorConfig DetectorConfig::doubt_index(double z, int W, double ema_alpha) {
  DetectorConfig c;
  c.family = DetectorFamily::doubt_index;
  c.z = z;
  c.W = W;
  c.ema_alpha = ema_alpha;
  if (W < 1) throw std::invalid_argument("doubt_index: W must be >= 1");
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0))
    throw std::invalid_argument("doubt_index: ema_alpha must be in (0,1]");
  return c;
}

DetectorConfig DetectorConfig::variance(double k, int V, int C) {
  DetectorConfig c;
  c.family = DetectorFamily::variance;
  c.k = k;
  c.V = V;
  c.C = C;
  if (V < 2 || C < 1) throw std::invalid_argument("variance: bad V or C");
  return c;
}

DetectorConfig DetectorConfig::percentile(double p, int W) {
  DetectorConfig c;
  c.family = DetectorFamily::percentile;
  c.p = p;
  c.W = W;
  if (!(p > 0.0 && p < 100.0))
    throw std::invalid_argument("percentile: p must be in (0,100)");
  if (W < 1) throw std::invalid_argument("percentile: W must be >= 1");
  return c;
}

DetectorConfig DetectorConfig::cusum(double slack, double h) {
  DetectorConfig c;
  c.family = DetectorFamily::cusum;
  c.cusum_slack = slack;
  c.cusum_h = h;
  return c;
}

DetectorConfig DetectorConfig::page_hinkley(double delta, double lambda) {
  DetectorConfig c;
  c.family = DetectorFamily::page_hinkley;
  c.ph_delta = delta;
  c.ph_lambda = lambda;
  return c;
}

namespace {

/// Splits "z3.0" style tokens after a known prefix.
double parse_num(const std::string& tok, char prefix, const std::string& id) {
  if (tok.empty() || tok[0] != prefix)
    throw std::invalid_argument("bad detector id: " + id);
  try {
    return std::stod(tok.substr(1));
  } catch (...) {
    throw std::invalid_argument("bad detector id: " + id);
  }
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t pos = s.find('_', start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

DetectorConfig DetectorConfig::from_id(const std::string& id) {
  auto toks = split_tokens(id);
  if (toks.size() < 2) throw std::invalid_argument("bad detector id: " + id);
  const std::string& head = toks[0];
  if (head == "di") {
    if (toks.size() < 3) throw std::invalid_argument("bad detector id: " + id);
    double z = parse_num(toks[1], 'z', id);
    int W = static_cast<int>(parse_num(toks[2], 'w', id));
    double alpha = 0.1;
    if (toks.size() > 3) alpha = parse_num(toks[3], 'a', id);
    return doubt_index(z, W, alpha);
  }
  if (head == "var") {
    double k = parse_num(toks[1], 'k', id);
    int V = 50, C = 5;
    for (std::size_t i = 2; i < toks.size(); ++i) {
      if (!toks[i].empty() && toks[i][0] == 'v')
        V = static_cast<int>(parse_num(toks[i], 'v', id));
      else if (!toks[i].empty() && toks[i][0] == 'c')
        C = static_cast<int>(parse_num(toks[i], 'c', id));
      else
        throw std::invalid_argument("bad detector id: " + id);
    }
    return variance(k, V, C);
  }
  if (head == "pct") {
    double p = parse_num(toks[1], 'p', id);
    int W = 5;
    if (toks.size() > 2) W = static_cast<int>(parse_num(toks[2], 'w', id));
    return percentile(p, W);
  }
  if (head == "cusum") {
    if (toks.size() != 3) throw std::invalid_argument("bad detector id: " + id);
    return cusum(parse_num(toks[1], 's', id), parse_num(toks[2], 'h', id));
  }
  if (head == "ph") {
    if (toks.size() != 3) throw std::invalid_argument("bad detector id: " + id);
    return page_hinkley(parse_num(toks[1], 'd', id),
                        parse_num(toks[2], 'l', id));
  }
  throw std::invalid_argument("bad detector id: " + id);
}

// ── Calibration ───────────────────────────────────────────────────────────

DetectorState calibrate(const DetectorConfig& config,
                        const std::vector<double>& baseline_pe) {
  const std::size_t min_len =
      config.family == DetectorFamily::variance
          ? std::max<std::size_t>(30, static_cast<std::size_t>(config.V))
          : 30;
  if (baseline_pe.size() < min_len)
    throw std::invalid_argument("calibrate: baseline too short (" +
                                std::to_string(baseline_pe.size()) + " < " +
                                std::to_string(min_len) + ")");

  DetectorState state;
  state.config = config;
  state.baseline = baseline_stats(baseline_pe);
  state.sigma_eff = state.baseline.std;
  if (state.sigma_eff == 0.0) {
    state.sigma_eff = 1e-9 * std::max(1.0, std::abs(state.baseline.mean));
    state.degenerate_sigma = true;
  }
  state.ema = state.baseline.mean;
  state.consecutive = 0;
  state.step = static_cast<std::int64_t>(baseline_pe.size());

  if (config.family == DetectorFamily::variance) {
    // Spread of sliding-window variances over the calibration window; the
    // fire threshold lives in variance units.
    const std::size_t V = static_cast<std::size_t>(config.V);
    std::vector<double> window_vars;
    window_vars.reserve(baseline_pe.size() - V + 1);
    for (std::size_t start = 0; start + V <= baseline_pe.size(); ++start) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = start; i < start + V; ++i) {
        s += baseline_pe[i];
        s2 += baseline_pe[i] * baseline_pe[i];
      }
      const double m = s / static_cast<double>(V);
      window_vars.push_back(std::max(0.0, s2 / static_cast<double>(V) - m * m));
    }
    double spread = population_std(window_vars);
    if (spread == 0.0) {
      spread = 1e-9 * std::max(1.0, state.baseline.variance);
      state.degenerate_sigma = true;
    }
    state.var_threshold = state.baseline.variance + config.k * spread;
  }

  if (config.family == DetectorFamily::percentile) {
    std::vector<double> sorted = baseline_pe;
    std::sort(sorted.begin(), sorted.end());
    state.pct_threshold = percentile_sorted(sorted, config.p);
  }

  state.cusum_s = 0.0;
  state.ph_sum = 0.0;
  state.ph_min = 0.0;
  return state;
}

// ── Step functions ────────────────────────────────────────────────────────

namespace {

bool advance_fire(DetectorState& state, bool condition_met) {
  ++state.step;
  if (state.fired) return false;
  if (condition_met) {
    state.fired = true;
    state.fire_step = state.step;
    return true;
  }
  return false;
}

void require_family(const DetectorState& state, DetectorFamily family,
                    const char* fn) {
  if (state.config.family != family)
    throw std::invalid_argument(std::string(fn) +
                                ": state belongs to a different family");
  if (state.baseline.count == 0)
    throw std::invalid_argument(std::string(fn) + ": uncalibrated state");
}

}  // namespace

bool di_step(DetectorState& state, double e) {
  require_family(state, DetectorFamily::doubt_index, "di_step");
  const double alpha = state.config.ema_alpha;
  state.ema = (1.0 - alpha) * state.ema + alpha * e;
  const double zscore = (state.ema - state.baseline.mean) / state.sigma_eff;
  if (zscore > state.config.z)
    ++state.consecutive;
  else
    state.consecutive = 0;
  return advance_fire(state, state.consecutive >= state.config.W);
}

bool variance_step(DetectorState& state, double e) {
  require_family(state, DetectorFamily::variance, "variance_step");
  state.window.push_back(e);
  if (state.window.size() > static_cast<std::size_t>(state.config.V))
    state.window.pop_front();
  bool over = false;
  if (state.window.size() == static_cast<std::size_t>(state.config.V)) {
    double s = 0.0, s2 = 0.0;
    for (double v : state.window) {
      s += v;
      s2 += v * v;
    }
    const double m = s / static_cast<double>(state.config.V);
    const double var =
        std::max(0.0, s2 / static_cast<double>(state.config.V) - m * m);
    over = var > state.var_threshold;
  }
  if (over)
    ++state.consecutive;
  else
    state.consecutive = 0;
  return advance_fire(state, state.consecutive >= state.config.C);
}

bool percentile_step(DetectorState& state, double e) {
  require_family(state, DetectorFamily::percentile, "percentile_step");
  if (e > state.pct_threshold)
    ++state.consecutive;
  else
    state.consecutive = 0;
  return advance_fire(state, state.consecutive >= state.config.W);
}

bool cusum_step(DetectorState& state, double e) {
  require_family(state, DetectorFamily::cusum, "cusum_step");
  const double slack = state.config.cusum_slack * state.sigma_eff;
  const double h = state.config.cusum_h * state.sigma_eff;
  state.cusum_s =
      std::max(0.0, state.cusum_s + (e - state.baseline.mean - slack));
  return advance_fire(state, state.cusum_s >= h);
}

bool page_hinkley_step(DetectorState& state, double e) {
  require_family(state, DetectorFamily::page_hinkley, "page_hinkley_step");
  const double delta = state.config.ph_delta * state.sigma_eff;
  const double lambda = state.config.ph_lambda * state.sigma_eff;
  state.ph_sum += e - state.baseline.mean - delta;
  state.ph_min = std::min(state.ph_min, state.ph_sum);
  return advance_fire(state, state.ph_sum - state.ph_min >= lambda);
}

bool detector_step(DetectorState& state, double e) {
  switch (state.config.family) {
    case DetectorFamily::doubt_index: return di_step(state, e);
    case DetectorFamily::variance: return variance_step(state, e);
    case DetectorFamily::percentile: return percentile_step(state, e);
    case DetectorFamily::cusum: return cusum_step(state, e);
    case DetectorFamily::page_hinkley: return page_hinkley_step(state, e);
  }
  throw std::logic_error("detector_step: unknown family");
}

DetectionOutcome detect_episode(const DetectorConfig& config,
                                const std::vector<double>& pe,
                                std::size_t calibration_window) {
  if (pe.size() <= calibration_window)
    throw std::invalid_argument(
        "detect_episode: series not longer than the calibration window");
  std::vector<double> baseline(pe.begin(),
                               pe.begin() + static_cast<std::ptrdiff_t>(
                                                calibration_window));
  DetectorState state = calibrate(config, baseline);
  DetectionOutcome outcome;
  for (std::size_t i = calibration_window; i < pe.size(); ++i) {
    if (detector_step(state, pe[i])) {
      outcome.fired = true;
      outcome.fire_step = state.fire_step;
      break;
    }
  }
  return outcome;
}

}  // namespace driftmon
