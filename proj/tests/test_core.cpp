#include <doctest.h>

#include <cmath>

#include "driftmon/core.hpp"

using namespace driftmon;

namespace {

/// Direct evaluation of the closed-form Wilson expression, kept independent
/// of the library implementation.
std::pair<double, double> wilson_oracle(double k, double n, double z) {
  const double phat = k / n;
  const double denom = 1.0 + z * z / n;
  const double center = (phat + z * z / (2.0 * n)) / denom;
  const double half =
      (z / denom) * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n));
  return {center - half, center + half};
}

}  // namespace

TEST_CASE("wilson interval boundary cases") {
  auto [lo0, hi0] = wilson_interval(0, 80, 0.95);
  CHECK(lo0 == 0.0);
  CHECK(hi0 > 0.0);

  auto [lo1, hi1] = wilson_interval(80, 80, 0.95);
  CHECK(hi1 == 1.0);
  CHECK(lo1 < 1.0);

  CHECK_THROWS_AS(wilson_interval(1, 0, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(wilson_interval(5, 4, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(wilson_interval(1, 4, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(wilson_interval(1, 4, 1.0), std::invalid_argument);
}

TEST_CASE("wilson interval matches the closed form at 95%") {
  const double z = 1.959964;
  auto [lo, hi] = wilson_interval(40, 80, 0.95);
  auto [olo, ohi] = wilson_oracle(40.0, 80.0, z);
  CHECK(lo == doctest::Approx(olo).epsilon(1e-12));
  CHECK(hi == doctest::Approx(ohi).epsilon(1e-12));
  // symmetric about 1/2 for k = n/2
  CHECK(lo + hi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wilson interval matches the oracle on random counts") {
  RngStream rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_u64() % 500);
    const std::int64_t k = static_cast<std::int64_t>(
        rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    auto [lo, hi] = wilson_interval(k, n, 0.95);
    auto [olo, ohi] =
        wilson_oracle(static_cast<double>(k), static_cast<double>(n), 1.959964);
    olo = std::max(0.0, olo);
    ohi = std::min(1.0, ohi);
    if (k == 0) olo = 0.0;
    if (k == n) ohi = 1.0;
    CHECK(std::abs(lo - olo) < 1e-12);
    CHECK(std::abs(hi - ohi) < 1e-12);
    // Interval always contains k/n.
    const double phat = static_cast<double>(k) / static_cast<double>(n);
    CHECK(lo <= phat + 1e-15);
    CHECK(hi >= phat - 1e-15);
  }
}

TEST_CASE("wilson width shrinks with more trials at fixed rate") {
  double prev = 1.0;
  for (std::int64_t n : {10, 40, 160, 640, 2560}) {
    auto [lo, hi] = wilson_interval(n / 2, n, 0.95);
    const double width = hi - lo;
    CHECK(width < prev);
    prev = width;
  }
}

TEST_CASE("normal quantile hits standard values") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normal_quantile(0.975) ==
        doctest::Approx(1.959963984540054).epsilon(1e-10));
  CHECK(normal_quantile(0.995) ==
        doctest::Approx(2.5758293035489004).epsilon(1e-10));
  CHECK(normal_quantile(0.1) == doctest::Approx(-normal_quantile(0.9)));
}

TEST_CASE("rng streams are deterministic and independent") {
  RngStream a = RngStream(123).derive(4).derive(5);
  RngStream b = RngStream(123).derive(4).derive(5);
  for (int i = 0; i < 200; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c = RngStream(123).derive(4).derive(6);
  RngStream d = RngStream(123).derive(4).derive(5);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (c.next_u64() == d.next_u64());
  CHECK(same == 0);

  // Gaussian draws are identical across equal streams even through the
  // polar-method rejection loop.
  RngStream e = episode_stream(9, 1, 2, 3);
  RngStream f = episode_stream(9, 1, 2, 3);
  for (int i = 0; i < 200; ++i) {
    const double x = e.next_gaussian();
    const double y = f.next_gaussian();
    CHECK(x == y);
  }
}

TEST_CASE("rng gaussian moments") {
  RngStream rng(2024);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_gaussian();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng uniform is in [0,1) and well spread") {
  RngStream rng(31337);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("percentile interpolation conventions") {
  std::vector<double> ascending;
  for (int i = 1; i <= 100; ++i) ascending.push_back(i);
  CHECK(percentile_sorted(ascending, 95.0) == doctest::Approx(95.05));
  CHECK(percentile_sorted(ascending, 0.0) == 1.0);
  CHECK(percentile_sorted(ascending, 100.0) == 100.0);

  std::vector<double> pair{0.0, 2.0};
  CHECK(population_std(pair) == doctest::Approx(1.0));  // divide-by-n
  CHECK(mean_of(pair) == doctest::Approx(1.0));
}

TEST_CASE("trajectory validity rules") {
  Trajectory traj;
  CHECK_FALSE(trajectory_is_valid(traj));
  Transition tr;
  tr.state = Vec::Zero(3);
  tr.action = Vec::Zero(1);
  tr.next_state = Vec::Zero(3);
  traj.transitions.push_back(tr);
  CHECK(trajectory_is_valid(traj));
  tr.terminated = true;
  traj.transitions.push_back(tr);   // terminated last: fine
  CHECK(trajectory_is_valid(traj));
  traj.transitions.push_back(tr);   // terminated in the middle now
  CHECK_FALSE(trajectory_is_valid(traj));
}
