#pragma once

// Independent brute-force reference implementations used only by tests.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace oracle {

/// Dense zero-mean multivariate normal log density.
inline double mvn_logdensity(const Eigen::VectorXd& w, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Eigen::VectorXd half = llt.matrixL().solve(w);
  constexpr double log2pi = 1.8378770664093454836;
  return -0.5 * (static_cast<double>(w.size()) * log2pi + logdet + half.squaredNorm());
}

/// Textbook Cox-de Boor recursion, evaluated independently for every basis
/// function index.
inline double bspline_recursion(const std::vector<double>& knots, int i, int degree, double x,
                                double right_end) {
  if (degree == 0) {
    const bool last = knots[static_cast<std::size_t>(i + 1)] >= right_end;
    if (last) return x >= knots[static_cast<std::size_t>(i)] && x <= knots[static_cast<std::size_t>(i + 1)] ? 1.0 : 0.0;
    return x >= knots[static_cast<std::size_t>(i)] && x < knots[static_cast<std::size_t>(i + 1)] ? 1.0 : 0.0;
  }
  double acc = 0.0;
  const double d1 = knots[static_cast<std::size_t>(i + degree)] - knots[static_cast<std::size_t>(i)];
  if (d1 > 0.0)
    acc += (x - knots[static_cast<std::size_t>(i)]) / d1 *
           bspline_recursion(knots, i, degree - 1, x, right_end);
  const double d2 =
      knots[static_cast<std::size_t>(i + degree + 1)] - knots[static_cast<std::size_t>(i + 1)];
  if (d2 > 0.0)
    acc += (knots[static_cast<std::size_t>(i + degree + 1)] - x) / d2 *
           bspline_recursion(knots, i + 1, degree - 1, x, right_end);
  return acc;
}

/// Welch PSD with a naive O(n^2) DFT per segment (independent of the FFT).
inline std::vector<double> welch_psd_naive(const std::vector<double>& x, int fs,
                                           std::size_t seg, double overlap) {
  std::vector<double> window(seg);
  double u = 0.0;
  for (std::size_t t = 0; t < seg; ++t) {
    window[t] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) /
                                      static_cast<double>(seg)));
    u += window[t] * window[t];
  }
  const std::size_t hop = seg - static_cast<std::size_t>(std::floor(overlap * static_cast<double>(seg)));
  const std::size_t nbins = seg / 2 + 1;
  std::vector<double> acc(nbins, 0.0);
  std::size_t nseg = 0;
  for (std::size_t s = 0; s + seg <= x.size(); s += hop) {
    for (std::size_t k = 0; k < nbins; ++k) {
      std::complex<double> sum(0.0, 0.0);
      for (std::size_t t = 0; t < seg; ++t) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t) /
                           static_cast<double>(seg);
        sum += x[s + t] * window[t] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      acc[k] += std::norm(sum);
    }
    ++nseg;
  }
  for (std::size_t k = 0; k < nbins; ++k) {
    acc[k] /= static_cast<double>(fs) * u * static_cast<double>(nseg);
    if (k != 0 && k != seg / 2) acc[k] *= 2.0;
  }
  return acc;
}

/// Tanh-sinh quadrature over (0,1); robust to integrable endpoint
/// singularities (beta densities with shape parameters below one).
inline double integrate_unit_interval(const std::function<double(double)>& f,
                                      double h = 2.5e-4, double tmax = 4.0) {
  const auto sigmoid = [](double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  };
  double acc = 0.0;
  const auto n = static_cast<long>(std::ceil(tmax / h));
  for (long i = -n; i <= n; ++i) {
    const double t = static_cast<double>(i) * h;
    const double s = std::numbers::pi * std::sinh(t);  // v = sigmoid(pi sinh t)
    const double v = sigmoid(s);
    const double omv = sigmoid(-s);
    if (v <= 0.0 || v >= 1.0) continue;
    const double w = std::numbers::pi * std::cosh(t) * v * omv;
    acc += f(v) * w;
  }
  return acc * h;
}

/// Integral of a density over (0,1) split at 1/2, with the upper half
/// evaluated through its mirror image. Keeps every evaluation point in
/// (0, 1/2], so endpoint singularities stay resolvable in double precision.
/// `mirror` must be the density of the reflected argument (f(1-v)).
inline double integrate_density_split(const std::function<double(double)>& f,
                                      const std::function<double(double)>& mirror) {
  const auto half = [](const std::function<double(double)>& g) {
    return 0.5 * integrate_unit_interval([&](double u) { return g(0.5 * u); });
  };
  return half(f) + half(mirror);
}

/// CRPS by direct double sum over sample pairs.
inline double crps_naive(const std::vector<double>& samples, double obs) {
  const auto m = static_cast<double>(samples.size());
  double t1 = 0.0;
  for (double s : samples) t1 += std::abs(s - obs);
  t1 /= m;
  double t2 = 0.0;
  for (double a : samples)
    for (double b : samples) t2 += std::abs(a - b);
  t2 /= m * m;
  return t1 - 0.5 * t2;
}

/// Nelder-Mead minimizer, adequate for small smooth problems.
inline Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                   Eigen::VectorXd x0, double step = 0.5, int max_iter = 20000) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  for (int i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step;
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  for (std::size_t i = 0; i < pts.size(); ++i) fv[i] = f(pts[i]);
  for (int it = 0; it < max_iter; ++it) {
    // order
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b)
        if (fv[b] < fv[a]) {
          std::swap(fv[a], fv[b]);
          std::swap(pts[a], pts[b]);
        }
    if (std::abs(fv.back() - fv.front()) < 1e-12) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd worst = pts.back();
    const Eigen::VectorXd refl = centroid + (centroid - worst);
    const double fr = f(refl);
    if (fr < fv.front()) {
      const Eigen::VectorXd exp_pt = centroid + 2.0 * (centroid - worst);
      const double fe = f(exp_pt);
      if (fe < fr) {
        pts.back() = exp_pt;
        fv.back() = fe;
      } else {
        pts.back() = refl;
        fv.back() = fr;
      }
    } else if (fr < fv[static_cast<std::size_t>(n - 1)]) {
      pts.back() = refl;
      fv.back() = fr;
    } else {
      const Eigen::VectorXd contr = centroid + 0.5 * (worst - centroid);
      const double fc = f(contr);
      if (fc < fv.back()) {
        pts.back() = contr;
        fv.back() = fc;
      } else {
        for (std::size_t i = 1; i < pts.size(); ++i) {
          pts[i] = pts.front() + 0.5 * (pts[i] - pts.front());
          fv[i] = f(pts[i]);
        }
      }
    }
  }
  return pts.front();
}

}  // namespace oracle
