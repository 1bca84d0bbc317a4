#include <doctest.h>

#include <cmath>

#include "driftmon/detectors.hpp"

using namespace driftmon;

namespace {

/// Baseline with exact mean 1.0 and exact population std 0.1.
std::vector<double> alternating_baseline(std::size_t n = 300) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (i % 2 == 0) ? 0.9 : 1.1;
  return out;
}

/// Mean 1.0 and std 0.25; every derived threshold is exact in binary.
std::vector<double> binary_exact_baseline(std::size_t n = 300) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (i % 2 == 0) ? 0.75 : 1.25;
  return out;
}

}  // namespace

TEST_CASE("canonical detector ids round-trip") {
  for (const char* id :
       {"di_z3.0_w5", "di_z2.5_w1", "var_k2", "var_k5", "pct_p99", "pct_p95",
        "cusum_s0.5_h5", "ph_d0.5_l5"}) {
    DetectorConfig c = DetectorConfig::from_id(id);
    CHECK(c.id() == id);
  }
  CHECK(DetectorConfig::doubt_index(3.0, 5).id() == "di_z3.0_w5");
  CHECK(DetectorConfig::variance(2.0).id() == "var_k2");
  CHECK(DetectorConfig::percentile(99.0).id() == "pct_p99");
  CHECK_THROWS(DetectorConfig::from_id("nonsense"));
  CHECK_THROWS(DetectorConfig::from_id("di_z3.0"));
}

TEST_CASE("calibration contract") {
  auto config = DetectorConfig::doubt_index(3.0, 5);
  std::vector<double> constant(300, 2.5);
  DetectorState state = calibrate(config, constant);
  CHECK(state.baseline.mean == doctest::Approx(2.5));
  CHECK(state.baseline.std == 0.0);
  CHECK(state.degenerate_sigma);
  CHECK(state.sigma_eff == doctest::Approx(1e-9 * 2.5));

  std::vector<double> ascending;
  for (int i = 1; i <= 100; ++i) ascending.push_back(i);
  auto pct = DetectorConfig::percentile(95.0);
  DetectorState ps = calibrate(pct, ascending);
  CHECK(ps.pct_threshold == doctest::Approx(95.05));

  std::vector<double> ten(10, 1.0);
  CHECK_THROWS_AS(calibrate(DetectorConfig::variance(2.0, 50, 5), ten),
                  std::invalid_argument);
  std::vector<double> forty(40, 1.0);
  CHECK_THROWS_AS(calibrate(DetectorConfig::variance(2.0, 50, 5), forty),
                  std::invalid_argument);
}

TEST_CASE("doubt index follows the EMA recursion exactly") {
  // mean 1.0, std 0.1: z_k = 10 (1 - 0.9^k) under constant e = 2.0
  auto config = DetectorConfig::doubt_index(3.0, 5, 0.1);
  auto baseline = alternating_baseline();
  DetectorState state = calibrate(config, baseline);
  const std::int64_t cal = static_cast<std::int64_t>(baseline.size());

  int fired_at = -1;
  for (int k = 1; k <= 20; ++k) {
    const bool fired_now = di_step(state, 2.0);
    const double expected_ema = 2.0 - std::pow(0.9, k);
    CHECK(state.ema == doctest::Approx(expected_ema).epsilon(1e-12));
    if (fired_now) {
      fired_at = k;
      break;
    }
  }
  // z-score first exceeds 3 at k = 4; five consecutive steps complete at k=8.
  CHECK(fired_at == 8);
  CHECK(*state.fire_step == cal + 8);
}

TEST_CASE("doubt index never fires on on-baseline input") {
  auto config = DetectorConfig::doubt_index(3.0, 5);
  DetectorState state = calibrate(config, alternating_baseline());
  for (int i = 0; i < 2000; ++i) CHECK_FALSE(di_step(state, 1.0));
  CHECK_FALSE(state.fired);
}

TEST_CASE("doubt index consecutive run resets on a dip") {
  auto config = DetectorConfig::doubt_index(1.0, 3, 1.0);  // alpha=1: EMA = e
  DetectorState state = calibrate(config, alternating_baseline());
  // two exceedances, a dip, two more: never 3 consecutive
  for (int cycle = 0; cycle < 50; ++cycle) {
    CHECK_FALSE(di_step(state, 5.0));
    CHECK_FALSE(di_step(state, 5.0));
    CHECK_FALSE(di_step(state, 1.0));
  }
  CHECK_FALSE(state.fired);
}

TEST_CASE("variance detector on a deterministic change") {
  // calibration alternates mu +- sigma: every window variance is sigma^2, so
  // the spread of window variances is zero and the threshold degenerates to
  // baseline variance (plus the floor).
  auto config = DetectorConfig::variance(2.0, 50, 5);
  DetectorState state = calibrate(config, alternating_baseline());
  CHECK(state.degenerate_sigma);
  CHECK(state.var_threshold == doctest::Approx(0.01).epsilon(1e-6));

  // constant stream: window variance 0, never fires
  DetectorState quiet = state;
  for (int i = 0; i < 300; ++i) CHECK_FALSE(variance_step(quiet, 1.0));

  // alternating mu +- 10 sigma: window variance 1.0 once the window fills at
  // streamed step 50; C = 5 consecutive windows complete at streamed step 54.
  DetectorState loud = state;
  int fired_at = -1;
  for (int k = 1; k <= 120; ++k) {
    const double e = (k % 2 == 1) ? 2.0 : 0.0;
    if (variance_step(loud, e)) {
      fired_at = k;
      break;
    }
  }
  CHECK(fired_at == 54);
  CHECK(fired_at <= 55);  // within V + C of the change
}

TEST_CASE("variance detector cannot fire before the window fills") {
  auto config = DetectorConfig::variance(2.0, 50, 1);
  DetectorState state = calibrate(config, alternating_baseline());
  for (int i = 0; i < 49; ++i)
    CHECK_FALSE(variance_step(state, (i % 2) ? 100.0 : -100.0));
}

TEST_CASE("percentile detector requires W consecutive raw exceedances") {
  std::vector<double> ascending;
  for (int i = 1; i <= 100; ++i) ascending.push_back(i);
  auto config = DetectorConfig::percentile(95.0, 5);
  DetectorState state = calibrate(config, ascending);

  // always below threshold: never fires
  DetectorState quiet = state;
  for (int i = 0; i < 500; ++i) CHECK_FALSE(percentile_step(quiet, 90.0));

  // constant 200 fires at the 5th post-calibration step
  DetectorState loud = state;
  int fired_at = -1;
  for (int k = 1; k <= 10; ++k) {
    if (percentile_step(loud, 200.0)) {
      fired_at = k;
      break;
    }
  }
  CHECK(fired_at == 5);
  CHECK(*loud.fire_step == 100 + 5);

  // 4 exceedances, one dip, 4 more: never fires with W = 5
  DetectorState reset = state;
  for (int i = 0; i < 4; ++i) CHECK_FALSE(percentile_step(reset, 200.0));
  CHECK_FALSE(percentile_step(reset, 1.0));
  for (int i = 0; i < 4; ++i) CHECK_FALSE(percentile_step(reset, 200.0));
  CHECK_FALSE(reset.fired);
}

TEST_CASE("cusum arithmetic progression") {
  auto config = DetectorConfig::cusum(0.5, 5.0);
  auto baseline = binary_exact_baseline();  // mean 1.0, sigma 0.25 (exact)
  DetectorState state = calibrate(config, baseline);

  // e = mu forever: S stays at 0
  DetectorState quiet = state;
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(cusum_step(quiet, 1.0));
    CHECK(quiet.cusum_s == 0.0);
  }

  // e = mu + 2*slack: S grows by slack = 0.125 each step, reaching
  // h = 1.25 at step ceil(h / slack) = 10; every quantity is exact in binary.
  DetectorState loud = state;
  int fired_at = -1;
  for (int k = 1; k <= 20; ++k) {
    if (cusum_step(loud, 1.25)) {
      fired_at = k;
      break;
    }
  }
  CHECK(fired_at == 10);
}

TEST_CASE("page-hinkley fires on a sustained shift") {
  auto config = DetectorConfig::page_hinkley(0.5, 5.0);
  DetectorState state = calibrate(config, binary_exact_baseline());
  DetectorState quiet = state;
  for (int i = 0; i < 200; ++i)
    CHECK_FALSE(page_hinkley_step(quiet, (i % 2) ? 1.25 : 0.75));
  CHECK_FALSE(quiet.fired);

  // increment per step = e - mu - delta = 1.5 - 1.0 - 0.125 = 0.375 (exact);
  // lambda = 5 sigma = 1.25, so the cumulative sum first reaches it at step 4.
  DetectorState loud = state;
  int fired_at = -1;
  for (int k = 1; k <= 30; ++k) {
    if (page_hinkley_step(loud, 1.5)) {
      fired_at = k;
      break;
    }
  }
  CHECK(fired_at == 4);
}

TEST_CASE("family dispatch rejects mismatched state") {
  auto di = calibrate(DetectorConfig::doubt_index(3.0, 5),
                      alternating_baseline());
  CHECK_THROWS_AS(variance_step(di, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(cusum_step(di, 1.0), std::invalid_argument);
}

TEST_CASE("detect_episode orchestrates calibration and streaming") {
  std::vector<double> pe = alternating_baseline(300);
  for (int i = 0; i < 100; ++i) pe.push_back(1.0);
  auto config = DetectorConfig::doubt_index(3.0, 5);
  auto quiet = detect_episode(config, pe, 300);
  CHECK_FALSE(quiet.fired);

  // jump after calibration fires a few steps in (alpha 0.1 EMA lag)
  std::vector<double> jump = alternating_baseline(300);
  for (int i = 0; i < 100; ++i) jump.push_back(3.0);
  auto hot = detect_episode(config, jump, 300);
  CHECK(hot.fired);
  CHECK(*hot.fire_step > 300);
  CHECK(*hot.fire_step < 320);

  CHECK_THROWS_AS(detect_episode(config, alternating_baseline(100), 300),
                  std::invalid_argument);
}

TEST_CASE("exact scale invariance of threshold-normalized families") {
  // Synthetic PE-like stream: positive, noisy, with a post-onset ramp.
  RngStream rng(99);
  std::vector<double> pe;
  for (int t = 0; t < 700; ++t) {
    double g = rng.next_gaussian();
    double level = 1.0 + 0.1 * g * g;
    if (t >= 300) {
      const double ramp = 0.004 * (t - 300);
      level += ramp * ramp;
    }
    pe.push_back(level);
  }
  std::vector<DetectorConfig> configs{
      DetectorConfig::doubt_index(2.5, 3), DetectorConfig::variance(2.0),
      DetectorConfig::percentile(99.0), DetectorConfig::doubt_index(3.0, 10)};
  for (double c : {0.1, 1.0, 10.0}) {
    std::vector<double> scaled;
    for (double e : pe) scaled.push_back(c * e);
    for (const auto& config : configs) {
      auto base = detect_episode(config, pe, 300);
      auto got = detect_episode(config, scaled, 300);
      CHECK(base.fired == got.fired);
      if (base.fired) CHECK(*base.fire_step == *got.fire_step);
    }
  }
}

TEST_CASE("monotonicity in z and W") {
  RngStream rng(4242);
  std::vector<double> pe;
  for (int t = 0; t < 800; ++t) {
    double g = rng.next_gaussian();
    double level = 1.0 + 0.15 * g * g;
    if (t >= 300) level += 2e-5 * (t - 300) * (t - 300) / 10.0;
    pe.push_back(level);
  }
  auto fire_step = [&](double z, int W) -> std::int64_t {
    auto out = detect_episode(DetectorConfig::doubt_index(z, W), pe, 300);
    return out.fired ? *out.fire_step : std::numeric_limits<std::int64_t>::max();
  };
  CHECK(fire_step(2.0, 5) <= fire_step(3.0, 5));
  CHECK(fire_step(3.0, 5) <= fire_step(4.0, 5));
  CHECK(fire_step(2.5, 1) <= fire_step(2.5, 5));
  CHECK(fire_step(2.5, 5) <= fire_step(2.5, 20));
}

TEST_CASE("variance family ignores constant offsets") {
  RngStream rng(11);
  std::vector<double> pe;
  for (int t = 0; t < 600; ++t) {
    double g = rng.next_gaussian();
    pe.push_back(1.0 + 0.1 * g * g + (t >= 300 ? 0.002 * (t - 300) : 0.0));
  }
  std::vector<double> shifted;
  for (double e : pe) shifted.push_back(e + 123.456);
  auto config = DetectorConfig::variance(2.0);
  auto a = detect_episode(config, pe, 300);
  auto b = detect_episode(config, shifted, 300);
  CHECK(a.fired == b.fired);
  if (a.fired) CHECK(*a.fire_step == *b.fire_step);
}
