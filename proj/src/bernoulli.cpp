#include "nfs/bernoulli.hpp"

#include <cmath>
#include <string>

#include "nfs/error.hpp"

namespace nfs {

namespace {

// |1 - 2*lambda| below this uses the series around 0.5.
constexpr double kBranchWidth = 1e-6;

void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw DomainError("continuous Bernoulli lambda must be in (0,1), got " +
                      std::to_string(lambda));
  }
}

}  // namespace

double cb_normalizer(double lambda) {
  check_lambda(lambda);
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(t) < kBranchWidth) {
    // atanh(t)/t = 1 + t^2/3 + t^4/5 + ...
    return 2.0 * (1.0 + t * t / 3.0);
  }
  return 2.0 * std::atanh(t) / t;
}

double cb_log_density(double x, double lambda) {
  check_lambda(lambda);
  if (!(x >= 0.0 && x <= 1.0)) {
    throw DomainError("continuous Bernoulli support is [0,1], got x = " +
                      std::to_string(x));
  }
  return std::log(cb_normalizer(lambda)) + x * std::log(lambda) +
         (1.0 - x) * std::log1p(-lambda);
}

double cb_cdf(double x, double lambda) {
  check_lambda(lambda);
  if (!(x >= 0.0 && x <= 1.0)) {
    throw DomainError("continuous Bernoulli support is [0,1], got x = " +
                      std::to_string(x));
  }
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(t) < kBranchWidth) return x;
  const double r = std::log(lambda) - std::log1p(-lambda);  // logit
  // F(x) = C*(1-lambda)/r * (exp(r*x) - 1)
  return cb_normalizer(lambda) * (1.0 - lambda) / r * std::expm1(r * x);
}

double cb_mean(double lambda) {
  check_lambda(lambda);
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(t) < kBranchWidth) return 0.5;
  return lambda / (2.0 * lambda - 1.0) + 1.0 / (2.0 * std::atanh(t));
}

double cb_sample(double lambda, Rng& rng) {
  check_lambda(lambda);
  const double u = rng.uniform01();
  const double t = 1.0 - 2.0 * lambda;
  if (std::abs(t) < kBranchWidth) return u;
  const double r = std::log(lambda) - std::log1p(-lambda);
  return std::log1p(u * r / (cb_normalizer(lambda) * (1.0 - lambda))) / r;
}

}  // namespace nfs
