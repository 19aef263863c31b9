#include <doctest.h>

#include <cmath>

#include "nfs/bernoulli.hpp"
#include "nfs/error.hpp"
#include "support/oracles.hpp"

using namespace nfs;
using nfs::test::simpson;

TEST_SUITE("bernoulli") {

TEST_CASE("normalizer at 0.5 is exactly 2") {
  CHECK(cb_normalizer(0.5) == 2.0);
}

TEST_CASE("normalizer closed form at 0.9") {
  // 2*atanh(-0.8)/(-0.8), evaluated independently: atanh(-0.8) = -ln(3)
  const double expected = 2.0 * std::log(3.0) / 0.8;
  CHECK(cb_normalizer(0.9) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(cb_normalizer(0.9) == doctest::Approx(2.74653).epsilon(1e-5));
}

TEST_CASE("normalizer is continuous across the 0.5 singularity") {
  CHECK(std::abs(cb_normalizer(0.5 + 1e-8) - 2.0) < 1e-6);
  CHECK(std::abs(cb_normalizer(0.5 - 1e-8) - 2.0) < 1e-6);
  for (double eps : {1e-5, 1e-6, 1e-7, 1e-9}) {
    CHECK(std::abs(cb_normalizer(0.5 + eps) - 2.0) < 1e-4 * (eps / 1e-5 + 1));
  }
}

TEST_CASE("normalizer domain errors") {
  CHECK_THROWS_AS(cb_normalizer(0.0), DomainError);
  CHECK_THROWS_AS(cb_normalizer(1.0), DomainError);
  CHECK_THROWS_AS(cb_normalizer(-0.2), DomainError);
}

TEST_CASE("density at lambda 0.5 is the uniform one for any x") {
  // C(0.5) = 2 and 0.5^x * 0.5^(1-x) = 0.5, so the density is constantly 1
  // (anything else could not integrate to 1 over [0,1]).
  for (double x : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    CHECK(std::exp(cb_log_density(x, 0.5)) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("density integrates to 1 (Simpson oracle)") {
  for (double lambda : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double integral = simpson(
        [lambda](double x) { return std::exp(cb_log_density(x, lambda)); }, 0.0,
        1.0, 10000);
    CHECK(std::abs(integral - 1.0) < 1e-6);
  }
}

TEST_CASE("log density closed form at x=1, lambda=0.9") {
  // Independent route: normalizer from quadrature of the unnormalized density.
  const double raw = simpson(
      [](double x) { return std::pow(0.9, x) * std::pow(0.1, 1.0 - x); }, 0.0, 1.0,
      10000);
  const double expected = std::log(1.0 / raw) + std::log(0.9);
  CHECK(cb_log_density(1.0, 0.9) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(cb_log_density(1.0, 0.9) == doctest::Approx(0.9049780).epsilon(1e-6));
}

TEST_CASE("log density domain errors") {
  CHECK_THROWS_AS(cb_log_density(-0.1, 0.5), DomainError);
  CHECK_THROWS_AS(cb_log_density(1.1, 0.5), DomainError);
  CHECK_THROWS_AS(cb_log_density(0.5, 0.0), DomainError);
}

TEST_CASE("cdf endpoints and uniform special case") {
  for (double lambda : {0.2, 0.5, 0.8}) {
    CHECK(cb_cdf(0.0, lambda) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cb_cdf(1.0, lambda) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(cb_cdf(0.37, 0.5) == doctest::Approx(0.37));
}

TEST_CASE("sampler mean at 0.5 is 0.5 (uniform case)") {
  Rng rng(123);
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += cb_sample(0.5, rng);
  CHECK(std::abs(total / n - 0.5) < 0.01);
}

TEST_CASE("sampler mean matches the quadrature mean at 0.7") {
  const double mean_quadrature = simpson(
      [](double x) { return x * std::exp(cb_log_density(x, 0.7)); }, 0.0, 1.0,
      10000);
  Rng rng(321);
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += cb_sample(0.7, rng);
  CHECK(std::abs(total / n - mean_quadrature) < 0.01);
  CHECK(cb_mean(0.7) == doctest::Approx(mean_quadrature).epsilon(1e-6));
}

TEST_CASE("sampler draws stay in [0,1] and follow the cdf") {
  Rng rng(55);
  int below = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = cb_sample(0.3, rng);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    if (x <= 0.4) ++below;
  }
  CHECK(std::abs(below / static_cast<double>(n) - cb_cdf(0.4, 0.3)) < 0.01);
}

TEST_CASE("fixed seed gives an identical draw sequence") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    CHECK(cb_sample(0.42, a) == cb_sample(0.42, b));
  }
}

}  // TEST_SUITE
