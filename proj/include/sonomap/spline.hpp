#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sonomap/csv.hpp"
#include "sonomap/stats.hpp"

namespace sonomap {

/// Cubic B-spline basis with an explicit intercept column.
///
/// A design row is [1, B_1(x), ..., B_{q}(x)] where the B_i form a clamped
/// cubic basis (partition of unity) over [lo, hi], q = n_coefficients - 1 and
/// the number of interior knots is n_coefficients - 5. Evaluation points
/// outside [lo, hi] are clamped to the boundary.
class SplineBasis {
 public:
  static constexpr int kDegree = 3;

  SplineBasis() = default;

  /// Direct construction from boundary and interior knots.
  SplineBasis(double lo, double hi, std::vector<double> interior, int n_coefficients)
      : lo_(lo), hi_(hi), interior_(std::move(interior)), n_coefficients_(n_coefficients) {
    if (n_coefficients_ < kDegree + 2)
      throw std::invalid_argument("spline needs at least 5 coefficients");
    if (static_cast<int>(interior_.size()) != n_coefficients_ - kDegree - 2)
      throw std::invalid_argument("interior knot count inconsistent with coefficient count");
    if (!(lo_ < hi_)) throw std::invalid_argument("boundary knots must satisfy lo < hi");
    double prev = lo_;
    for (double t : interior_) {
      if (!(t > prev)) throw std::invalid_argument("knots must be strictly increasing");
      prev = t;
    }
    if (!interior_.empty() && !(interior_.back() < hi_))
      throw std::invalid_argument("knots must be strictly increasing");
    knots_.assign(kDegree + 1, lo_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), kDegree + 1, hi_);
  }

  /// Boundary knots at the observed min/max, interior knots at equally
  /// spaced quantiles. Falls back to evenly spaced interior knots if the
  /// quantiles collide (heavily tied covariates).
  static SplineBasis from_quantiles(const std::vector<double>& x, int n_coefficients) {
    if (x.empty()) throw std::invalid_argument("no covariate values for spline knots");
    const int n_interior = n_coefficients - kDegree - 2;
    const std::set<double> distinct(x.begin(), x.end());
    if (static_cast<int>(distinct.size()) < n_interior + 2)
      throw std::invalid_argument("fewer distinct covariate values than knots");
    const double lo = *std::min_element(x.begin(), x.end());
    const double hi = *std::max_element(x.begin(), x.end());
    std::vector<double> sorted(x);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> interior(static_cast<std::size_t>(std::max(0, n_interior)));
    bool ok = true;
    double prev = lo;
    for (int i = 0; i < n_interior; ++i) {
      const double q = static_cast<double>(i + 1) / static_cast<double>(n_interior + 1);
      interior[static_cast<std::size_t>(i)] = quantile(sorted, q, /*sorted=*/true);
      if (!(interior[static_cast<std::size_t>(i)] > prev)) ok = false;
      prev = interior[static_cast<std::size_t>(i)];
    }
    if (ok && !interior.empty() && !(interior.back() < hi)) ok = false;
    if (!ok) {
      warn("quantile knots collide; spacing interior knots evenly");
      for (int i = 0; i < n_interior; ++i)
        interior[static_cast<std::size_t>(i)] =
            lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(n_interior + 1);
    }
    return SplineBasis(lo, hi, std::move(interior), n_coefficients);
  }

  int n_coefficients() const { return n_coefficients_; }
  int n_basis() const { return n_coefficients_ - 1; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& interior_knots() const { return interior_; }

  /// One design row: intercept followed by the basis values at x.
  Eigen::RowVectorXd row(double x) const {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n_coefficients_);
    r(0) = 1.0;
    const double xx = std::clamp(x, lo_, hi_);
    // Knot span such that knots[span] <= xx < knots[span+1]; x at the right
    // boundary falls into the last nonempty span.
    const int nb = n_basis();
    int span = kDegree;
    const int last = nb - 1;
    while (span < last && xx >= knots_[static_cast<std::size_t>(span + 1)]) ++span;

    // Local triangular Cox-de Boor evaluation of the degree-3 nonzero funcs.
    double nvals[kDegree + 1];
    double left[kDegree + 1];
    double right[kDegree + 1];
    nvals[0] = 1.0;
    for (int d = 1; d <= kDegree; ++d) {
      left[d] = xx - knots_[static_cast<std::size_t>(span + 1 - d)];
      right[d] = knots_[static_cast<std::size_t>(span + d)] - xx;
      double saved = 0.0;
      for (int r2 = 0; r2 < d; ++r2) {
        const double denom = right[r2 + 1] + left[d - r2];
        const double tmp = denom > 0.0 ? nvals[r2] / denom : 0.0;
        nvals[r2] = saved + right[r2 + 1] * tmp;
        saved = left[d - r2] * tmp;
      }
      nvals[d] = saved;
    }
    for (int k = 0; k <= kDegree; ++k) {
      const int col = span - kDegree + k;  // basis index 0..nb-1
      r(1 + col) = nvals[k];
    }
    return r;
  }

  Eigen::MatrixXd design(const std::vector<double>& x) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), n_coefficients_);
    for (std::size_t i = 0; i < x.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = row(x[i]);
    return m;
  }

 private:
  double lo_ = 0.0, hi_ = 1.0;
  std::vector<double> interior_;
  int n_coefficients_ = 5;
  std::vector<double> knots_;
};

}  // namespace sonomap
