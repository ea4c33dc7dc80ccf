#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace sonomap {

/// Floor/ceiling applied to means so beta parameters stay positive.
inline constexpr double kMeanEps = 1e-12;

inline double clamp_unit(double v) {
  if (v < kMeanEps) return kMeanEps;
  if (v > 1.0 - kMeanEps) return 1.0 - kMeanEps;
  return v;
}

/// Numerically stable inverse logit, clamped to (eps, 1-eps).
inline double inv_logit(double z) {
  double v;
  if (z >= 0.0) {
    v = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    v = e / (1.0 + e);
  }
  return clamp_unit(v);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Log density of Beta(v | a = mu*phi, b = (1-mu)*phi).
/// Throws on arguments outside the stated domains.
inline double beta_logdensity(double v, double mu, double phi) {
  if (!(v > 0.0 && v < 1.0)) throw std::domain_error("outside beta support");
  if (!(mu > 0.0 && mu < 1.0)) throw std::domain_error("beta mean outside (0,1)");
  if (!(mu * phi > 0.0)) throw std::domain_error("beta parameters must be positive");
  const double a = mu * phi;
  const double b = (1.0 - mu) * phi;
  return (a - 1.0) * std::log(v) + (b - 1.0) * std::log1p(-v) - std::lgamma(a) -
         std::lgamma(b) + std::lgamma(a + b);
}

/// Same density without argument checks; out-of-support points yield -inf.
/// This is the sampler-facing path: invalid proposals reject, never throw.
inline double beta_logdensity_unchecked(double v, double mu, double phi) {
  if (!(v > 0.0 && v < 1.0) || !(phi > 0.0)) return -std::numeric_limits<double>::infinity();
  const double m = clamp_unit(mu);
  const double a = m * phi;
  const double b = (1.0 - m) * phi;
  return (a - 1.0) * std::log(v) + (b - 1.0) * std::log1p(-v) - std::lgamma(a) -
         std::lgamma(b) + std::lgamma(a + b);
}

/// Linear predictor -> mean on (0,1).
inline double build_mean(const Eigen::RowVectorXd& basis_row, const Eigen::VectorXd& beta,
                         double random_effect) {
  return inv_logit(basis_row.dot(beta) + random_effect);
}

/// Pull values off the unit-interval boundary: v <- (v*(n-1) + 0.5)/n.
inline double boundary_squeeze(double v, std::size_t n) {
  const double nn = static_cast<double>(n);
  return (v * (nn - 1.0) + 0.5) / nn;
}

}  // namespace sonomap
