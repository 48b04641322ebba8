#include <doctest.h>

#include <cmath>

#include "hiddendrift/common.hpp"
#include "hiddendrift/rng.hpp"

using namespace hiddendrift;

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(42, 0), b(42, 0), c(42, 1);
  bool identical = true, distinct = false;
  for (int i = 0; i < 100; ++i) {
    const auto xa = a.next_u64();
    identical = identical && xa == b.next_u64();
    distinct = distinct || xa != c.next_u64();
  }
  CHECK(identical);
  CHECK(distinct);
}

TEST_CASE("rng uniforms stay in (0,1) and normals have the right moments") {
  Rng rng(7);
  RunningStats u_stats, n_stats, n2_stats;
  for (int i = 0; i < 200000; ++i) {
    const double u = rng.next_uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    u_stats.add(u);
    const double z = rng.next_normal();
    n_stats.add(z);
    n2_stats.add(z * z);
  }
  CHECK(std::abs(u_stats.mean() - 0.5) < 3.0 * u_stats.std_error());
  CHECK(std::abs(n_stats.mean()) < 3.0 * n_stats.std_error());
  CHECK(std::abs(n2_stats.mean() - 1.0) < 3.0 * n2_stats.std_error());
}

TEST_CASE("log_sum_exp matches the naive sum away from overflow") {
  Vec logs(3), w(3);
  logs << -1.0, 0.5, 2.0;
  w << 0.2, 0.3, 0.5;
  const double naive = std::log(0.2 * std::exp(-1.0) + 0.3 * std::exp(0.5) + 0.5 * std::exp(2.0));
  CHECK(log_sum_exp(logs, w) == doctest::Approx(naive).epsilon(1e-14));
}

TEST_CASE("log_sum_exp survives extreme magnitudes") {
  Vec logs(2), w(2);
  logs << 1000.0, 990.0;
  w << 0.5, 0.5;
  const double expected = 1000.0 + std::log(0.5 * (1.0 + std::exp(-10.0)));
  CHECK(log_sum_exp(logs, w) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("running stats reproduce closed-form mean, variance, and SE") {
  RunningStats stats;
  for (int i = 1; i <= 5; ++i) stats.add(static_cast<double>(i));
  CHECK(stats.count() == 5);
  CHECK(stats.mean() == doctest::Approx(3.0));
  CHECK(stats.variance() == doctest::Approx(2.5));  // unbiased sample variance of 1..5
  CHECK(stats.std_error() == doctest::Approx(std::sqrt(2.5 / 5.0)));
}

TEST_CASE("min_eigenvalue on a known symmetric matrix") {
  Mat m(2, 2);
  m << 2.0, 1.0, 1.0, 2.0;
  CHECK(min_eigenvalue(m) == doctest::Approx(1.0).epsilon(1e-12));
}
