#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sonomap/beta.hpp"
#include "sonomap/rng.hpp"
#include "support/oracles.hpp"

using namespace sonomap;

TEST_CASE("uniform beta has zero log density") {
  for (double v : {0.1, 0.5, 0.73, 0.99}) CHECK(beta_logdensity(v, 0.5, 2.0) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("beta density integrates to one") {
  for (double mu : {0.2, 0.5, 0.9}) {
    for (double phi : {2.0, 50.0, 5000.0}) {
      const double integral = oracle::integrate_density_split(
          [&](double v) { return std::exp(beta_logdensity(v, mu, phi)); },
          [&](double v) { return std::exp(beta_logdensity(v, 1.0 - mu, phi)); });
      INFO("mu=" << mu << " phi=" << phi);
      CHECK(integral == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("reflection symmetry") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.uniform(0.01, 0.99);
    const double mu = rng.uniform(0.05, 0.95);
    const double phi = rng.uniform(1.0, 2000.0);
    CHECK(beta_logdensity(v, mu, phi) ==
          Catch::Approx(beta_logdensity(1.0 - v, 1.0 - mu, phi)).margin(1e-10));
  }
}

TEST_CASE("sampling mean matches the mean parameter") {
  Rng rng(11);
  const double mu = 0.3, phi = 100.0;
  const int n = 1000000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += rng.beta(mu * phi, (1.0 - mu) * phi);
  const double se = std::sqrt(mu * (1.0 - mu) / (phi + 1.0) / n);
  CHECK(std::abs(acc / n - mu) < 3.0 * se);
}

TEST_CASE("domain errors") {
  CHECK_THROWS_WITH(beta_logdensity(0.0, 0.5, 2.0), Catch::Matchers::ContainsSubstring("outside beta support"));
  CHECK_THROWS(beta_logdensity(1.0, 0.5, 2.0));
  CHECK_THROWS(beta_logdensity(0.5, 0.5, 0.0));
  CHECK_THROWS(beta_logdensity(0.5, 0.0, 2.0));
  CHECK(beta_logdensity_unchecked(-1.0, 0.5, 2.0) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("inverse logit") {
  CHECK(inv_logit(0.0) == 0.5);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double z = rng.normal(0.0, 4.0);
    CHECK(inv_logit(z) + inv_logit(-z) == Catch::Approx(1.0).margin(1e-12));
    CHECK(inv_logit(z) > 0.0);
    CHECK(inv_logit(z) < 1.0);
  }
  // saturation clamps instead of hitting 0/1
  CHECK(inv_logit(1000.0) == 1.0 - kMeanEps);
  CHECK(inv_logit(-1000.0) == kMeanEps);
}

TEST_CASE("build_mean with zero coefficients is one half") {
  Eigen::RowVectorXd row(3);
  row << 1.0, 0.4, 0.6;
  CHECK(build_mean(row, Eigen::VectorXd::Zero(3), 0.0) == 0.5);
}

TEST_CASE("boundary squeeze maps into the open interval") {
  const std::size_t n = 1566;
  CHECK(boundary_squeeze(0.0, n) == Catch::Approx(0.5 / 1566));
  CHECK(boundary_squeeze(1.0, n) == Catch::Approx((1565.0 + 0.5) / 1566));
  CHECK(boundary_squeeze(0.0, n) > 0.0);
  CHECK(boundary_squeeze(1.0, n) < 1.0);
}
