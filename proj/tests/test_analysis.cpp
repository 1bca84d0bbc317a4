#include <doctest.h>

#include <cmath>

#include "driftmon/analysis.hpp"

using namespace driftmon;

namespace {

std::vector<std::pair<double, BinomialEstimate>> logistic_points(
    double eps_star, double slope, double floor = 0.0, double range = 1.0) {
  std::vector<std::pair<double, BinomialEstimate>> pts;
  for (double eps : default_epsilon_grid()) {
    const double x = std::log10(eps) - std::log10(eps_star);
    const double r = floor + range / (1.0 + std::exp(-slope * x));
    BinomialEstimate est;
    est.rate = r;
    est.trials = 80;
    est.successes = static_cast<std::int64_t>(std::round(r * 80));
    pts.emplace_back(eps, est);
  }
  return pts;
}

EpisodeRecord make_record(double eps, bool fired,
                          std::optional<std::int64_t> fire,
                          std::optional<std::int64_t> collapse) {
  EpisodeRecord rec;
  rec.env = "fragile_pole";
  rec.detector_id = "di_z3.0_w5";
  rec.capacity = "medium";
  rec.profile_kind = DriftKind::linear;
  rec.epsilon = eps;
  rec.onset = 300;
  rec.episode_length = collapse ? *collapse : 1000;
  rec.fired = fired;
  rec.fire_step = fire;
  rec.collapse_step = collapse;
  return rec;
}

}  // namespace

TEST_CASE("sigmoid fit recovers its own generative model") {
  auto pts = logistic_points(0.003, 4.0);
  ThresholdFit fit = fit_sigmoid(pts);
  CHECK(fit.censoring == Censoring::none);
  CHECK(fit.method == FitMethod::logistic_fit);
  CHECK(std::abs(fit.epsilon_star - 0.003) / 0.003 < 0.02);
  CHECK(fit.r_squared > 0.999);
}

TEST_CASE("sigmoid fit absorbs floors and ceilings") {
  auto pts = logistic_points(0.005, 6.0, 0.25, 0.7);
  ThresholdFit fit = fit_sigmoid(pts);
  CHECK(fit.censoring == Censoring::none);
  CHECK(std::abs(fit.epsilon_star - 0.005) / 0.005 < 0.05);
  CHECK(fit.floor == doctest::Approx(0.25).epsilon(0.1));
  CHECK(fit.r_squared > 0.99);
}

TEST_CASE("step data brackets the crossing") {
  std::vector<std::pair<double, BinomialEstimate>> pts;
  for (double eps : default_epsilon_grid()) {
    BinomialEstimate est;
    est.rate = eps <= 0.002 ? 0.0 : 1.0;
    est.trials = 80;
    est.successes = static_cast<std::int64_t>(est.rate * 80);
    pts.emplace_back(eps, est);
  }
  ThresholdFit fit = fit_sigmoid(pts);
  CHECK(fit.censoring == Censoring::none);
  CHECK(fit.epsilon_star >= 0.002);
  CHECK(fit.epsilon_star <= 0.003);
}

TEST_CASE("sigmoid censoring") {
  std::vector<std::pair<double, BinomialEstimate>> zeros, ones;
  for (double eps : default_epsilon_grid()) {
    BinomialEstimate z;
    z.rate = 0.0;
    z.trials = 80;
    zeros.emplace_back(eps, z);
    BinomialEstimate o;
    o.rate = 0.93;
    o.trials = 80;
    ones.emplace_back(eps, o);
  }
  CHECK(fit_sigmoid(zeros).censoring == Censoring::never_detects);
  CHECK(fit_sigmoid(ones).censoring == Censoring::always_detects);
}

TEST_CASE("sigmoid fit input validation") {
  std::vector<std::pair<double, BinomialEstimate>> few;
  for (double eps : {1e-3, 2e-3, 3e-3, 4e-3}) {
    BinomialEstimate est;
    est.rate = 0.5;
    few.emplace_back(eps, est);
  }
  CHECK_THROWS_AS(fit_sigmoid(few), std::invalid_argument);

  std::vector<std::pair<double, BinomialEstimate>> narrow;
  for (double eps : {1e-3, 2e-3, 3e-3, 4e-3, 5e-3}) {
    BinomialEstimate est;
    est.rate = 0.5;
    narrow.emplace_back(eps, est);
  }
  CHECK_THROWS_AS(fit_sigmoid(narrow), std::invalid_argument);
}

TEST_CASE("sigmoid fit is equivariant under epsilon rescaling") {
  auto pts = logistic_points(0.002, 5.0, 0.05, 0.9);
  ThresholdFit base = fit_sigmoid(pts);
  for (double c : {0.1, 3.0, 10.0}) {
    auto scaled = pts;
    for (auto& [eps, est] : scaled) eps *= c;
    ThresholdFit fit = fit_sigmoid(scaled);
    CHECK(std::abs(fit.epsilon_star - c * base.epsilon_star) /
              (c * base.epsilon_star) <
          1e-6);
  }
}

TEST_CASE("power law recovers exact generative coefficients") {
  std::vector<PowerLawRow> rows;
  const double a = -3.0, alpha = 0.5, beta = 0.3;
  for (double z : {2.0, 2.5, 3.0, 3.5, 4.0})
    for (double w : {3.0, 5.0, 10.0, 20.0}) {
      const double eps =
          std::pow(10.0, a + alpha * std::log10(z) + beta * std::log10(w));
      rows.push_back({z, w, eps});
    }
  PowerLawFit fit = fit_power_law(rows);
  CHECK(std::abs(fit.intercept - a) < 1e-10);
  CHECK(std::abs(fit.alpha - alpha) < 1e-10);
  CHECK(std::abs(fit.beta - beta) < 1e-10);
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("power law input validation") {
  std::vector<PowerLawRow> with_w1{{2.0, 1.0, 1e-3},
                                   {2.5, 3.0, 2e-3},
                                   {3.0, 5.0, 3e-3},
                                   {3.5, 10.0, 4e-3}};
  try {
    fit_power_law(with_w1);
    FAIL("expected W=1 rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("W <= 1") != std::string::npos);
  }

  std::vector<PowerLawRow> three{{2.0, 3.0, 1e-3},
                                 {2.5, 5.0, 2e-3},
                                 {3.0, 10.0, 3e-3}};
  CHECK_THROWS_AS(fit_power_law(three), std::invalid_argument);

  std::vector<PowerLawRow> one_z{{2.0, 3.0, 1e-3},
                                 {2.0, 5.0, 2e-3},
                                 {2.0, 10.0, 3e-3},
                                 {2.0, 20.0, 4e-3}};
  CHECK_THROWS_AS(fit_power_law(one_z), std::invalid_argument);

  std::vector<PowerLawRow> censored{{2.0, 3.0, 0.0},
                                    {2.5, 5.0, 2e-3},
                                    {3.0, 10.0, 3e-3},
                                    {3.5, 20.0, 4e-3}};
  CHECK_THROWS_AS(fit_power_law(censored), std::invalid_argument);
}

TEST_CASE("fpr correction identities") {
  CHECK(fpr_correct(0.2, 0.2) == 0.0);
  CHECK(fpr_correct(1.0, 0.37) == doctest::Approx(1.0));
  CHECK(fpr_correct(0.1, 0.2) == 0.0);  // clamped
  for (double raw : {0.0, 0.25, 0.5, 0.99})
    CHECK(fpr_correct(raw, 0.0) == doctest::Approx(raw));
  CHECK_THROWS_AS(fpr_correct(0.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fpr_correct(1.5, 0.1), std::invalid_argument);
}

TEST_CASE("sdt point extraction") {
  SweepResult sweep;
  auto add = [&](const std::string& det, double eps, double rate) {
    ConditionKey key{"stable_oscillator", DriftKind::linear, det, eps,
                     "medium"};
    ConditionSummary s;
    s.episodes = 80;
    s.fired = static_cast<int>(rate * 80);
    s.detection = BinomialEstimate::from_counts(s.fired, 80);
    sweep.summary[key] = s;
  };
  add("di_z3.0_w5", 1e-4, 0.05);
  add("di_z3.0_w5", 3e-3, 0.95);
  add("var_k2", 1e-4, 0.10);
  add("var_k2", 3e-3, 0.10);
  auto points = sdt_points(sweep, "stable_oscillator", DriftKind::linear,
                           "medium", 1e-4, 3e-3);
  REQUIRE(points.size() == 2);
  CHECK(points[0].detector_id == "di_z3.0_w5");
  CHECK(points[0].fpr == doctest::Approx(0.05).epsilon(0.05));
  CHECK(points[0].detection_rate == doctest::Approx(0.95).epsilon(0.05));
  CHECK(points[1].fpr == doctest::Approx(points[1].detection_rate));

  try {
    sdt_points(sweep, "stable_oscillator", DriftKind::linear, "medium", 1e-4,
               0.007);
    FAIL("expected missing-grid error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("0.007") != std::string::npos);
  }
}

TEST_CASE("radix-2 fft matches a naive dft") {
  RngStream rng(55);
  const std::size_t n = 64;
  std::vector<std::complex<double>> x(n);
  for (auto& v : x) v = {rng.next_gaussian(), rng.next_gaussian()};
  std::vector<std::complex<double>> naive(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k * t) /
                         static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    naive[k] = acc;
  }
  fft_radix2(x);
  for (std::size_t k = 0; k < n; ++k)
    CHECK(std::abs(x[k] - naive[k]) < 1e-9);

  std::vector<std::complex<double>> bad(48);
  CHECK_THROWS_AS(fft_radix2(bad), std::invalid_argument);
}

TEST_CASE("psd ratio basics and Parseval consistency") {
  RngStream rng(12);
  std::vector<double> base;
  for (int i = 0; i < 700; ++i) base.push_back(rng.next_gaussian());
  CHECK(psd_ratio(base, base) == doctest::Approx(1.0).epsilon(1e-9));

  // Ramp of slope 10 sigma dominates the spectrum.
  std::vector<double> ramp = base;
  for (std::size_t i = 0; i < ramp.size(); ++i)
    ramp[i] += 10.0 * static_cast<double>(i);
  const double r = psd_ratio(base, ramp);
  CHECK(r > 20.0);

  // Parseval: non-DC power equals window length times the segment variance,
  // so the ratio matches the time-domain variance ratio.
  auto seg_var = [](const std::vector<double>& s) {
    std::vector<double> tail(s.end() - 512, s.end());
    const double m = mean_of(tail);
    double acc = 0.0;
    for (double v : tail) acc += (v - m) * (v - m);
    return acc / static_cast<double>(tail.size());
  };
  CHECK(r == doctest::Approx(seg_var(ramp) / seg_var(base)).epsilon(1e-9));

  // Small zero-mean sinusoid adds amplitude^2/2 of power.
  std::vector<double> sine = base;
  for (std::size_t i = 0; i < sine.size(); ++i)
    sine[i] += 0.1 * std::sin(2.0 * M_PI * 0.01 * static_cast<double>(i));
  CHECK(psd_ratio(base, sine) < 1.5);

  // Constant offsets are removed before the transform.
  std::vector<double> shifted_base = base, shifted_ramp = ramp;
  for (auto& v : shifted_base) v += 42.0;
  for (auto& v : shifted_ramp) v += 42.0;
  CHECK(psd_ratio(shifted_base, shifted_ramp) == doctest::Approx(r).epsilon(1e-12));

  std::vector<double> tiny(100, 1.0);
  CHECK_THROWS_AS(psd_ratio(tiny, base), std::invalid_argument);
}

TEST_CASE("regime classification rules") {
  ThresholdFit fit;
  fit.censoring = Censoring::none;
  fit.epsilon_star = 0.003;

  std::vector<EpisodeRecord> records;
  // eps = 1e-4: neither fires nor collapses -> sub_threshold
  for (int i = 0; i < 20; ++i)
    records.push_back(make_record(1e-4, false, std::nullopt, std::nullopt));
  // eps = 0.01: fired at 350, no collapse -> detectable
  for (int i = 0; i < 20; ++i)
    records.push_back(make_record(0.01, true, 350, std::nullopt));
  // eps = 0.05: collapse at 325, never fired -> collapse before awareness
  for (int i = 0; i < 20; ++i)
    records.push_back(make_record(0.05, false, std::nullopt, 325));
  // eps = 0.5: fired at 310, collapsed at 330 -> overwhelming
  for (int i = 0; i < 20; ++i)
    records.push_back(make_record(0.5, true, 310, 330));

  auto rows = classify_regimes(records, fit);
  REQUIRE(rows.size() == 4);
  CHECK(*rows[0].label == RegimeLabel::sub_threshold);
  CHECK(*rows[1].label == RegimeLabel::detectable);
  CHECK(*rows[2].label == RegimeLabel::collapse_before_awareness);
  CHECK(*rows[3].label == RegimeLabel::overwhelming);
  CHECK(*rows[3].median_gap == doctest::Approx(20.0));

  std::vector<EpisodeRecord> sparse(records.begin(), records.begin() + 5);
  CHECK_THROWS_AS(classify_regimes(sparse, fit), std::invalid_argument);
}
