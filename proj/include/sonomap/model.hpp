#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sonomap/beta.hpp"
#include "sonomap/covariance.hpp"
#include "sonomap/features.hpp"
#include "sonomap/spline.hpp"

namespace sonomap {

enum class Variant { model1 = 1, model2 = 2, model3 = 3 };
enum class Stage { one = 1, two = 2 };

inline Variant variant_from_int(int v) {
  if (v < 1 || v > 3) throw std::invalid_argument("model variant must be 1, 2 or 3");
  return static_cast<Variant>(v);
}

struct Priors {
  double beta_variance = 10000.0;  // normal(0, variance)
  double phi_shape = 2.0;
  double phi_scale = 20000.0;  // inverse-gamma(shape, scale)
  double sigma2_shape = 2.0;
  double sigma2_scale = 5.0;
  double rho_lo = 0.1;
  double rho_hi = 1.0;
  double wishart_df = 3.0;
  double wishart_scale = 0.1;      // scale matrix = wishart_scale * I
  double phi_uniform_hi = 10000.0; // Model 3 stage-2 precisions
};

struct McmcSettings {
  int iterations = 50000;
  int burn_in = 25000;
  int thin = 10;
  int n_chains = 3;
  std::uint64_t seed = 1;
  int adapt_batch = 50;

  int retained() const { return (iterations - burn_in) / thin; }

  void validate() const {
    if (iterations <= 0 || burn_in < 0 || thin <= 0 || n_chains < 1)
      throw std::invalid_argument("invalid MCMC settings");
    if (burn_in >= iterations) throw std::invalid_argument("burn-in must be less than iterations");
  }
};

struct ModelSpec {
  Variant variant = Variant::model1;
  Stage stage = Stage::one;
  Priors priors;
  int n_coefficients = 5;
  McmcSettings mcmc;
  double split_threshold = 2.0;  // Model 3 stage 1: indicator on the road covariate
  bool include_effects = true;   // false: plain beta regression (used by oracles)

  static ModelSpec stage1(Variant v) {
    ModelSpec s;
    s.variant = v;
    s.stage = Stage::one;
    s.n_coefficients = 5;
    s.priors.phi_scale = 20000.0;
    s.priors.sigma2_scale = 5.0;
    return s;
  }

  static ModelSpec stage2(Variant v) {
    ModelSpec s;
    s.variant = v;
    s.stage = Stage::two;
    s.n_coefficients = 8;
    s.priors.phi_scale = 2000.0;
    s.priors.sigma2_scale = 2.0;
    return s;
  }

  bool uses_lambda() const { return variant != Variant::model1 && include_effects; }
  bool split_precision() const { return variant == Variant::model3 && stage == Stage::one; }
  bool exp_precision() const { return variant == Variant::model3 && stage == Stage::two; }
  int n_precision_params() const { return (split_precision() || exp_precision()) ? 2 : 1; }
};

/// Precision structure shared by fitting and prediction.
struct PrecisionModel {
  enum class Kind { constant, stage1_split, stage2_exp } kind = Kind::constant;
  double phi_a = 0.0;       // constant phi, lower-split phi, or additive phi_1
  double phi_b = 0.0;       // upper-split phi or multiplicative phi_2
  double threshold = 2.0;   // split point on the road covariate

  static PrecisionModel constant(double phi) { return {Kind::constant, phi, 0.0, 0.0}; }
  static PrecisionModel split(double lo, double hi, double thr = 2.0) {
    return {Kind::stage1_split, lo, hi, thr};
  }
  static PrecisionModel exp_link(double p1, double p2) { return {Kind::stage2_exp, p1, p2, 0.0}; }

  double at(double covariate_or_alpha) const {
    switch (kind) {
      case Kind::constant: return phi_a;
      case Kind::stage1_split: return covariate_or_alpha < threshold ? phi_a : phi_b;
      default: return phi_a + phi_b * std::exp(covariate_or_alpha);
    }
  }
};

inline double precision_at(const PrecisionModel& pm, double covariate_or_alpha) {
  return pm.at(covariate_or_alpha);
}

/// Observations in canonical order: site-major, then time-of-day, then minute.
struct Dataset {
  int n_sites = 0;
  int n_tods = 3;
  int n_minutes = 29;
  std::vector<int> site_ids;  // dense index -> original id

  std::vector<int> site;    // 0-based dense site index, per observation
  std::vector<int> tod;     // 0-based
  std::vector<int> minute;  // 0-based
  std::vector<double> value;
  std::vector<double> covariate;

  int n() const { return static_cast<int>(value.size()); }

  struct Entry {
    int site_id;
    int tod;     // 0-based
    int minute;  // 0-based
    double value;
    double covariate;
  };

  static Dataset build(std::vector<Entry> entries, int n_tods = 3, int n_minutes = 29) {
    if (entries.empty()) throw std::invalid_argument("empty dataset");
    std::vector<int> ids;
    for (const auto& e : entries) ids.push_back(e.site_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::map<int, int> dense;
    for (std::size_t i = 0; i < ids.size(); ++i) dense[ids[i]] = static_cast<int>(i);

    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
      return std::tuple(dense.at(a.site_id), a.tod, a.minute) <
             std::tuple(dense.at(b.site_id), b.tod, b.minute);
    });
    Dataset d;
    d.n_sites = static_cast<int>(ids.size());
    d.n_tods = n_tods;
    d.n_minutes = n_minutes;
    d.site_ids = ids;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.tod < 0 || e.tod >= n_tods || e.minute < 0 || e.minute >= n_minutes)
        throw std::invalid_argument("observation index out of range");
      if (!(e.value > 0.0 && e.value < 1.0))
        throw std::invalid_argument("response outside (0,1); apply the boundary squeeze first");
      if (i > 0) {
        const auto& p = entries[i - 1];
        if (dense.at(p.site_id) == dense.at(e.site_id) && p.tod == e.tod && p.minute == e.minute)
          throw std::invalid_argument("duplicate (site, time-of-day, minute)");
      }
      d.site.push_back(dense.at(e.site_id));
      d.tod.push_back(e.tod);
      d.minute.push_back(e.minute);
      d.value.push_back(e.value);
      d.covariate.push_back(e.covariate);
    }
    return d;
  }

  static Dataset from_soundbites(const std::vector<SoundBite>& bites,
                                 const std::map<int, double>& site_covariate, Stage stage,
                                 int n_minutes = 29) {
    std::vector<Entry> entries;
    entries.reserve(bites.size());
    for (const auto& b : bites) {
      Entry e;
      e.site_id = b.site_id;
      e.tod = static_cast<int>(b.time_of_day);
      e.minute = b.minute - 1;
      e.value = stage == Stage::one ? b.alpha : b.y;
      const auto it = site_covariate.find(b.site_id);
      if (it == site_covariate.end())
        throw std::runtime_error("no covariate for site " + std::to_string(b.site_id));
      e.covariate = it->second;
      entries.push_back(e);
    }
    return build(std::move(entries), 3, n_minutes);
  }
};

/// Contiguous run of observations sharing (site, tod).
struct BlockInfo {
  int site = 0;
  int tod = 0;
  int first = 0;
  int count = 0;
  std::vector<int> minutes;
  bool full = false;  // consecutive minutes 0..n_minutes-1
};

/// Per-site grouping used by the Kronecker covariance (Models 2 and 3).
struct SiteInfo {
  int first = 0;
  int count = 0;
  std::vector<int> blocks;
  bool complete = false;  // all tods present with full minute runs
};

inline std::vector<BlockInfo> build_blocks(const Dataset& d) {
  std::vector<BlockInfo> blocks;
  int i = 0;
  while (i < d.n()) {
    BlockInfo b;
    b.site = d.site[static_cast<std::size_t>(i)];
    b.tod = d.tod[static_cast<std::size_t>(i)];
    b.first = i;
    while (i < d.n() && d.site[static_cast<std::size_t>(i)] == b.site &&
           d.tod[static_cast<std::size_t>(i)] == b.tod) {
      b.minutes.push_back(d.minute[static_cast<std::size_t>(i)]);
      ++i;
    }
    b.count = static_cast<int>(b.minutes.size());
    b.full = b.count == d.n_minutes && b.minutes.front() == 0 &&
             b.minutes.back() == d.n_minutes - 1;
    blocks.push_back(std::move(b));
  }
  return blocks;
}

inline std::vector<SiteInfo> build_sites(const Dataset& d, const std::vector<BlockInfo>& blocks) {
  std::vector<SiteInfo> sites;
  int bi = 0;
  while (bi < static_cast<int>(blocks.size())) {
    SiteInfo s;
    const int site = blocks[static_cast<std::size_t>(bi)].site;
    s.first = blocks[static_cast<std::size_t>(bi)].first;
    s.count = 0;
    bool all_full = true;
    while (bi < static_cast<int>(blocks.size()) && blocks[static_cast<std::size_t>(bi)].site == site) {
      s.blocks.push_back(bi);
      s.count += blocks[static_cast<std::size_t>(bi)].count;
      all_full = all_full && blocks[static_cast<std::size_t>(bi)].full;
      ++bi;
    }
    s.complete = all_full && static_cast<int>(s.blocks.size()) == d.n_tods;
    sites.push_back(std::move(s));
  }
  return sites;
}

// ---- prior densities ----

inline double log_normal_prior(double x, double variance) {
  return -0.5 * (kLog2Pi + std::log(variance) + x * x / variance);
}

inline double log_inverse_gamma(double v, double shape, double scale) {
  if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(v) - scale / v;
}

inline double log_uniform(double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) return -std::numeric_limits<double>::infinity();
  return -std::log(hi - lo);
}

inline double log_multigamma(double a, int p) {
  double acc = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) acc += std::lgamma(a + 0.5 * (1.0 - j));
  return acc;
}

/// Inverse-Wishart(df, scale * I) log density via a precomputed inverse and
/// log-determinant of the argument.
inline double log_inverse_wishart(const Eigen::MatrixXd& lambda_inv, double lambda_logdet,
                                  double df, double scale_diag) {
  const int p = static_cast<int>(lambda_inv.rows());
  const double trace = scale_diag * lambda_inv.trace();
  const double logdet_scale = p * std::log(scale_diag);
  return 0.5 * df * logdet_scale - 0.5 * df * p * std::log(2.0) - log_multigamma(0.5 * df, p) -
         0.5 * (df + p + 1.0) * lambda_logdet - 0.5 * trace;
}

/// Sampler state; lambda is tracked through its Cholesky factor.
struct ParamState {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  Eigen::MatrixXd lambda_chol;  // lower triangular, 3x3
  double rho = 0.5;
  double phi_a = 1.0;
  double phi_b = 1.0;
  Eigen::VectorXd w;

  Eigen::MatrixXd lambda() const { return lambda_chol * lambda_chol.transpose(); }

  PrecisionModel precision(const ModelSpec& spec) const {
    if (spec.split_precision()) return PrecisionModel::split(phi_a, phi_b, spec.split_threshold);
    if (spec.exp_precision()) return PrecisionModel::exp_link(phi_a, phi_b);
    return PrecisionModel::constant(phi_a);
  }
};

/// Evaluates the joint posterior with per-observation and per-structure
/// caches so block updates stay O(block).
class ModelEngine {
 public:
  ModelEngine(const ModelSpec& spec, const Dataset& data, const SplineBasis& basis)
      : spec_(spec), data_(data), basis_(basis) {
    if (basis.n_coefficients() != spec.n_coefficients)
      throw std::invalid_argument("spline basis does not match model spec");
    blocks_ = build_blocks(data_);
    sites_ = build_sites(data_, blocks_);
    design_ = basis_.design(data_.covariate);
    if (spec_.split_precision()) {
      for (int i = 0; i < data_.n(); ++i)
        (data_.covariate[static_cast<std::size_t>(i)] < spec_.split_threshold ? lower_obs_
                                                                              : upper_obs_)
            .push_back(i);
    }
  }

  const ModelSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  const SplineBasis& basis() const { return basis_; }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  const std::vector<SiteInfo>& sites() const { return sites_; }
  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<int>& lower_obs() const { return lower_obs_; }
  const std::vector<int>& upper_obs() const { return upper_obs_; }

  /// Swap in a new covariate vector (stage 2 feeds a fresh fitted-alpha row).
  void set_covariate(const Eigen::VectorXd& cov) {
    if (cov.size() != data_.n()) throw std::invalid_argument("covariate length mismatch");
    for (int i = 0; i < data_.n(); ++i) data_.covariate[static_cast<std::size_t>(i)] = cov(i);
    design_ = basis_.design(data_.covariate);
  }

  ParamState initial_state(Rng& rng) const {
    ParamState st;
    // OLS on the logit-transformed response
    Eigen::VectorXd z(data_.n());
    for (int i = 0; i < data_.n(); ++i) z(i) = logit(data_.value[static_cast<std::size_t>(i)]);
    st.beta = design_.colPivHouseholderQr().solve(z);
    st.sigma2 = inverse_gamma_median(spec_.priors.sigma2_shape, spec_.priors.sigma2_scale);
    st.lambda_chol = Eigen::MatrixXd::Identity(data_.n_tods, data_.n_tods);
    st.rho = 0.5;
    if (spec_.exp_precision()) {
      st.phi_a = 0.5 * spec_.priors.phi_uniform_hi / 2.0;
      st.phi_b = 0.5 * spec_.priors.phi_uniform_hi / 2.0;
    } else {
      st.phi_a = inverse_gamma_median(spec_.priors.phi_shape, spec_.priors.phi_scale);
      st.phi_b = st.phi_a;
    }
    st.w = Eigen::VectorXd::Zero(data_.n());
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (std::isfinite(log_posterior(st))) return st;
      for (int j = 0; j < st.beta.size(); ++j) st.beta(j) = rng.normal(0.0, 0.5);
    }
    throw std::runtime_error("cannot initialize");
  }

  static double inverse_gamma_median(double shape, double scale) {
    // median of Gamma(shape, rate 1), bisection on the regularized CDF
    double lo = 0.0, hi = shape + 10.0 * std::sqrt(shape) + 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (gamma_cdf(mid, shape) < 0.5 ? lo : hi) = mid;
    }
    return scale / (0.5 * (lo + hi));
  }

  // ---- full evaluations ----

  double loglik_obs(int i, const ParamState& st) const {
    const double mu = inv_logit(design_.row(i).dot(st.beta) + st.w(i));
    return beta_logdensity_unchecked(data_.value[static_cast<std::size_t>(i)], mu,
                                     obs_phi(i, st));
  }

  double obs_phi(int i, const ParamState& st) const {
    if (spec_.split_precision())
      return data_.covariate[static_cast<std::size_t>(i)] < spec_.split_threshold ? st.phi_a
                                                                                  : st.phi_b;
    if (spec_.exp_precision())
      return st.phi_a + st.phi_b * std::exp(data_.covariate[static_cast<std::size_t>(i)]);
    return st.phi_a;
  }

  double loglik(const ParamState& st) const {
    double acc = 0.0;
    for (int i = 0; i < data_.n(); ++i) acc += loglik_obs(i, st);
    return acc;
  }

  /// Random-effect log-density, Model 1: independent AR(1) blocks.
  double effects_term_block(int b, const ParamState& st) const {
    const auto& blk = blocks_[static_cast<std::size_t>(b)];
    const Eigen::VectorXd w = st.w.segment(blk.first, blk.count);
    if (blk.full && blk.count > 1) {
      return Ar1Block(st.sigma2, st.rho, blk.count).mvn_logdensity(w);
    }
    return ar1_gap_logdensity(w, blk.minutes, st.sigma2, st.rho);
  }

  /// Random-effect log-density, Models 2/3: per-site Kronecker structure.
  double effects_term_site(int s, const ParamState& st) const {
    const auto& si = sites_[static_cast<std::size_t>(s)];
    const Eigen::VectorXd w = st.w.segment(si.first, si.count);
    const Eigen::MatrixXd lambda = st.lambda();
    if (si.complete) {
      Eigen::LLT<Eigen::MatrixXd> llt(lambda);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const Eigen::MatrixXd lambda_inv =
          llt.solve(Eigen::MatrixXd::Identity(lambda.rows(), lambda.cols()));
      const double lambda_logdet =
          2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      return kron_site_logdensity(w, lambda_inv, lambda_logdet, st.rho, data_.n_minutes);
    }
    // irregular pattern: dense covariance over the observed (tod, minute) pairs
    Eigen::MatrixXd cov(si.count, si.count);
    int a = 0;
    for (int bi : si.blocks) {
      const auto& ba = blocks_[static_cast<std::size_t>(bi)];
      int bpos = 0;
      for (int ma : ba.minutes) {
        int c = 0;
        for (int bj : si.blocks) {
          const auto& bb = blocks_[static_cast<std::size_t>(bj)];
          for (int mb : bb.minutes) {
            cov(a + bpos, c) = lambda(ba.tod, bb.tod) * std::pow(st.rho, std::abs(ma - mb));
            ++c;
          }
        }
        ++bpos;
      }
      a += ba.count;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::VectorXd half = llt.matrixL().solve(w);
    return -0.5 * (si.count * kLog2Pi + logdet + half.squaredNorm());
  }

  static double kron_site_logdensity(const Eigen::VectorXd& w, const Eigen::MatrixXd& lambda_inv,
                                     double lambda_logdet, double rho, int minutes) {
    const int k = static_cast<int>(lambda_inv.rows());
    const Ar1Block unit(1.0, rho, minutes);
    Eigen::MatrixXd g(k, k);
    for (int a2 = 0; a2 < k; ++a2)
      for (int b2 = a2; b2 < k; ++b2) {
        const double v = unit.bilinear(w.segment(a2 * minutes, minutes),
                                       w.segment(b2 * minutes, minutes));
        g(a2, b2) = v;
        g(b2, a2) = v;
      }
    const double quad = (lambda_inv.array() * g.array()).sum();
    const double logdet = minutes * lambda_logdet + k * (minutes - 1) * std::log(1.0 - rho * rho);
    return -0.5 * (k * minutes * kLog2Pi + logdet + quad);
  }

  double effects_logdensity(const ParamState& st) const {
    if (!spec_.include_effects) return 0.0;
    double acc = 0.0;
    if (spec_.uses_lambda()) {
      for (int s = 0; s < static_cast<int>(sites_.size()); ++s)
        acc += effects_term_site(s, st);
    } else {
      for (int b = 0; b < static_cast<int>(blocks_.size()); ++b)
        acc += effects_term_block(b, st);
    }
    return acc;
  }

  double log_prior(const ParamState& st) const {
    const auto& pr = spec_.priors;
    double acc = 0.0;
    for (int j = 0; j < st.beta.size(); ++j) acc += log_normal_prior(st.beta(j), pr.beta_variance);
    if (spec_.exp_precision()) {
      acc += log_uniform(st.phi_a, 0.0, pr.phi_uniform_hi);
      acc += log_uniform(st.phi_b, 0.0, pr.phi_uniform_hi);
    } else if (spec_.split_precision()) {
      acc += log_inverse_gamma(st.phi_a, pr.phi_shape, pr.phi_scale);
      acc += log_inverse_gamma(st.phi_b, pr.phi_shape, pr.phi_scale);
    } else {
      acc += log_inverse_gamma(st.phi_a, pr.phi_shape, pr.phi_scale);
    }
    if (spec_.include_effects) {
      acc += log_uniform(st.rho, pr.rho_lo, pr.rho_hi);
      if (st.rho <= pr.rho_lo || st.rho >= pr.rho_hi)
        return -std::numeric_limits<double>::infinity();
      if (spec_.uses_lambda()) {
        const Eigen::MatrixXd lambda = st.lambda();
        Eigen::LLT<Eigen::MatrixXd> llt(lambda);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const Eigen::MatrixXd lambda_inv =
            llt.solve(Eigen::MatrixXd::Identity(lambda.rows(), lambda.cols()));
        const double lambda_logdet =
            2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        acc += log_inverse_wishart(lambda_inv, lambda_logdet, pr.wishart_df, pr.wishart_scale);
      } else {
        acc += log_inverse_gamma(st.sigma2, pr.sigma2_shape, pr.sigma2_scale);
      }
    }
    return acc;
  }

  double log_posterior(const ParamState& st) const {
    const double prior = log_prior(st);
    if (!std::isfinite(prior)) return -std::numeric_limits<double>::infinity();
    return loglik(st) + effects_logdensity(st) + prior;
  }

 private:
  static double gamma_cdf(double x, double shape) {
    // regularized lower incomplete gamma by series (adequate for small shape)
    if (x <= 0.0) return 0.0;
    double term = 1.0 / shape;
    double sum = term;
    for (int k = 1; k < 500; ++k) {
      term *= x / (shape + k);
      sum += term;
      if (term < 1e-16 * sum) break;
    }
    return std::exp(shape * std::log(x) - x - std::lgamma(shape)) * sum;
  }

  ModelSpec spec_;
  Dataset data_;
  SplineBasis basis_;
  std::vector<BlockInfo> blocks_;
  std::vector<SiteInfo> sites_;
  Eigen::MatrixXd design_;
  std::vector<int> lower_obs_, upper_obs_;
};

/// Decomposed joint density, used by tests and diagnostics.
struct LogPosteriorParts {
  double loglik = 0.0;
  double effects = 0.0;
  double prior = 0.0;
  double total() const { return loglik + effects + prior; }
};

inline LogPosteriorParts log_posterior_parts(const ModelSpec& spec, const Dataset& data,
                                             const SplineBasis& basis, const ParamState& st) {
  const ModelEngine eng(spec, data, basis);
  LogPosteriorParts parts;
  parts.loglik = eng.loglik(st);
  parts.effects = eng.effects_logdensity(st);
  parts.prior = eng.log_prior(st);
  return parts;
}

}  // namespace sonomap
