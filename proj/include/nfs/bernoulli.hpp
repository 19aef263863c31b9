#pragma once

#include "nfs/rng.hpp"

namespace nfs {

// Continuous Bernoulli distribution on [0,1] with density
//   p(x | lambda) = C(lambda) * lambda^x * (1 - lambda)^(1 - x).
// At lambda = 0.5 the density is the uniform one and C = 2; elsewhere
//   C(lambda) = 2 * atanh(1 - 2*lambda) / (1 - 2*lambda),
// with a series fallback near the removable singularity at 0.5.

// Normalizing constant C(lambda); lambda must lie in (0,1).
double cb_normalizer(double lambda);

// log p(x | lambda) for x in [0,1].
double cb_log_density(double x, double lambda);

// Cumulative distribution function at x in [0,1].
double cb_cdf(double x, double lambda);

// Closed-form mean E[X].
double cb_mean(double lambda);

// Inverse-CDF draw; uniform on [0,1) when lambda = 0.5.
double cb_sample(double lambda, Rng& rng);

}  // namespace nfs
