#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "sonomap/rng.hpp"

namespace sonomap {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// AR(1) covariance block: entry (a,b) = sigma2 * rho^[a-b].
/// The inverse is tridiagonal, so log-densities and quadratic forms are O(n).
struct Ar1Block {
  int dim;
  double sigma2;
  double rho;

  Ar1Block(double sigma2_in, double rho_in, int dim_in = 29)
      : dim(dim_in), sigma2(sigma2_in), rho(rho_in) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("AR(1) variance must be positive");
    if (!(rho >= 0.1 && rho < 1.0)) throw std::invalid_argument("AR(1) correlation outside [0.1, 1)");
    if (dim < 1) throw std::invalid_argument("AR(1) dimension must be positive");
  }

  double entry(int a, int b) const { return sigma2 * std::pow(rho, std::abs(a - b)); }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = entry(i, j);
    return m;
  }

  Eigen::MatrixXd dense_inverse() const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(dim, dim);
    if (dim == 1) {
      q(0, 0) = 1.0 / sigma2;
      return q;
    }
    const double c = 1.0 / (sigma2 * (1.0 - rho * rho));
    for (int i = 0; i < dim; ++i) {
      q(i, i) = (i == 0 || i == dim - 1) ? c : c * (1.0 + rho * rho);
      if (i > 0) {
        q(i, i - 1) = -c * rho;
        q(i - 1, i) = -c * rho;
      }
    }
    return q;
  }

  double logdet() const {
    return dim * std::log(sigma2) + (dim - 1) * std::log(1.0 - rho * rho);
  }

  double quad_form(const Eigen::VectorXd& w) const { return bilinear(w, w); }

  /// u' C^{-1} v via the tridiagonal inverse.
  double bilinear(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
    if (u.size() != dim || v.size() != dim) throw std::invalid_argument("AR(1) size mismatch");
    if (dim == 1) return u(0) * v(0) / sigma2;
    const double r2 = rho * rho;
    double acc = u(0) * v(0) + u(dim - 1) * v(dim - 1);
    for (int t = 1; t < dim - 1; ++t) acc += (1.0 + r2) * u(t) * v(t);
    double cross = 0.0;
    for (int t = 1; t < dim; ++t) cross += u(t) * v(t - 1) + u(t - 1) * v(t);
    acc -= rho * cross;
    return acc / (sigma2 * (1.0 - r2));
  }

  double mvn_logdensity(const Eigen::VectorXd& w) const {
    return -0.5 * (dim * kLog2Pi + logdet() + quad_form(w));
  }

  /// Draw a zero-mean AR(1) path.
  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd w(dim);
    const double s = std::sqrt(sigma2);
    w(0) = s * rng.normal();
    const double innov = s * std::sqrt(1.0 - rho * rho);
    for (int t = 1; t < dim; ++t) w(t) = rho * w(t - 1) + innov * rng.normal();
    return w;
  }
};

/// Zero-mean Gaussian log-density over a subset of AR(1) positions
/// (the marginal stays Markov, with lag-dependent correlation rho^gap).
inline double ar1_gap_logdensity(const Eigen::VectorXd& w, const std::vector<int>& positions,
                                 double sigma2, double rho) {
  const int q = static_cast<int>(positions.size());
  if (w.size() != q) throw std::invalid_argument("AR(1) subset size mismatch");
  if (q == 0) return 0.0;
  double lp = -0.5 * (kLog2Pi + std::log(sigma2) + w(0) * w(0) / sigma2);
  for (int l = 1; l < q; ++l) {
    const int gap = positions[static_cast<std::size_t>(l)] - positions[static_cast<std::size_t>(l - 1)];
    const double r = std::pow(rho, gap);
    const double cvar = sigma2 * (1.0 - r * r);
    const double resid = w(l) - r * w(l - 1);
    lp += -0.5 * (kLog2Pi + std::log(cvar) + resid * resid / cvar);
  }
  return lp;
}

/// Time-of-day covariance composed with a unit-variance AR(1) correlation:
/// full per-site covariance is lambda (x) R, laid out time-of-day-major
/// (w = [tod 0 minutes..., tod 1 minutes..., tod 2 minutes...]).
struct KroneckerCov {
  Eigen::MatrixXd lambda;  // k x k, symmetric positive definite
  double rho;
  int minutes;
  Eigen::MatrixXd lambda_inv;
  double lambda_logdet;

  KroneckerCov(const Eigen::MatrixXd& lambda_in, double rho_in, int minutes_in = 29)
      : lambda(lambda_in), rho(rho_in), minutes(minutes_in) {
    if (lambda.rows() != lambda.cols()) throw std::invalid_argument("lambda must be square");
    if (!lambda.isApprox(lambda.transpose(), 1e-10))
      throw std::invalid_argument("lambda must be symmetric");
    if (!(rho >= 0.1 && rho < 1.0)) throw std::invalid_argument("AR(1) correlation outside [0.1, 1)");
    Eigen::LLT<Eigen::MatrixXd> llt(lambda);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("lambda not positive definite");
    lambda_inv = llt.solve(Eigen::MatrixXd::Identity(lambda.rows(), lambda.cols()));
    lambda_logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  int k() const { return static_cast<int>(lambda.rows()); }
  int dim() const { return k() * minutes; }

  double logdet() const {
    return minutes * lambda_logdet + k() * (minutes - 1) * std::log(1.0 - rho * rho);
  }

  double quad_form(const Eigen::VectorXd& w) const {
    if (w.size() != dim()) throw std::invalid_argument("Kronecker size mismatch");
    const Ar1Block unit(1.0, rho, minutes);
    const int kk = k();
    Eigen::MatrixXd g(kk, kk);
    for (int a = 0; a < kk; ++a)
      for (int b = a; b < kk; ++b) {
        const double v = unit.bilinear(w.segment(a * minutes, minutes),
                                       w.segment(b * minutes, minutes));
        g(a, b) = v;
        g(b, a) = v;
      }
    return (lambda_inv.array() * g.array()).sum();
  }

  double mvn_logdensity(const Eigen::VectorXd& w) const {
    return -0.5 * (dim() * kLog2Pi + logdet() + quad_form(w));
  }

  Eigen::MatrixXd dense() const {
    const Ar1Block unit(1.0, rho, minutes);
    Eigen::MatrixXd r = unit.dense();
    Eigen::MatrixXd full(dim(), dim());
    for (int a = 0; a < k(); ++a)
      for (int b = 0; b < k(); ++b)
        full.block(a * minutes, b * minutes, minutes, minutes) = lambda(a, b) * r;
    return full;
  }

  /// Draw w ~ N(0, lambda (x) R).
  Eigen::VectorXd sample(Rng& rng) const {
    const Ar1Block unit(1.0, rho, minutes);
    Eigen::MatrixXd e(minutes, k());
    for (int c = 0; c < k(); ++c) e.col(c) = unit.sample(rng);
    Eigen::LLT<Eigen::MatrixXd> llt(lambda);
    const Eigen::MatrixXd w = e * llt.matrixL().toDenseMatrix().transpose();
    Eigen::VectorXd out(dim());
    for (int c = 0; c < k(); ++c) out.segment(c * minutes, minutes) = w.col(c);
    return out;
  }
};

inline Ar1Block ar1_covariance(double sigma2, double rho, int dim = 29) {
  return Ar1Block(sigma2, rho, dim);
}

inline KroneckerCov kron_covariance(const Eigen::MatrixXd& lambda, double rho, int minutes = 29) {
  return KroneckerCov(lambda, rho, minutes);
}

/// Dense zero-mean MVN log-density; used for irregular observation patterns.
inline double dense_mvn_logdensity(const Eigen::VectorXd& w, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::runtime_error("covariance not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Eigen::VectorXd half = llt.matrixL().solve(w);
  return -0.5 * (w.size() * kLog2Pi + logdet + half.squaredNorm());
}

}  // namespace sonomap
