#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "sonomap/model.hpp"
#include "sonomap/rng.hpp"

namespace sonomap {

/// Diminishing adaptation amount for batch `batch_index` (1-based).
inline double adapt_delta(int batch_index) {
  return std::min(0.01, 1.0 / std::sqrt(static_cast<double>(batch_index)));
}

inline bool accept_mh(double log_alpha, Rng& rng) {
  if (log_alpha >= 0.0) return true;
  if (!(log_alpha > -std::numeric_limits<double>::infinity())) return false;  // -inf or nan
  return std::log(rng.uniform()) < log_alpha;
}

/// Scalar proposal scale adapted toward a target acceptance rate.
struct AdaptiveScale {
  double log_scale = 0.0;
  double target = 0.44;
  int batch_accepted = 0;
  int batch_proposed = 0;
  int batch_index = 0;
  long long post_accepted = 0;
  long long post_proposed = 0;
  bool frozen = false;

  double scale() const { return std::exp(log_scale); }

  void record(bool accepted, bool post_burn) {
    ++batch_proposed;
    if (accepted) ++batch_accepted;
    if (post_burn) {
      ++post_proposed;
      if (accepted) ++post_accepted;
    }
  }

  /// Close a batch: move log-scale toward the target unless frozen.
  void end_batch() {
    ++batch_index;
    if (!frozen && batch_proposed > 0) {
      const double rate = static_cast<double>(batch_accepted) / batch_proposed;
      const double delta = adapt_delta(batch_index);
      if (rate > target)
        log_scale += delta;
      else if (rate < target)
        log_scale -= delta;
    }
    batch_accepted = 0;
    batch_proposed = 0;
  }

  double post_rate() const {
    return post_proposed > 0 ? static_cast<double>(post_accepted) / post_proposed : 0.0;
  }
};

/// Column layout of the draws matrix.
struct ParamLayout {
  int p = 0;
  int sigma2 = -1;
  int lambda0 = -1;  // six entries: (1,1),(2,1),(3,1),(2,2),(3,2),(3,3)
  int rho = -1;
  int phi_a = -1;
  int phi_b = -1;
  int w0 = -1;
  int total = 0;

  static ParamLayout make(const ModelSpec& spec, int n_obs) {
    ParamLayout l;
    l.p = spec.n_coefficients;
    int c = l.p;
    if (spec.include_effects) {
      if (spec.uses_lambda()) {
        l.lambda0 = c;
        c += 6;
      } else {
        l.sigma2 = c++;
      }
      l.rho = c++;
    }
    l.phi_a = c++;
    if (spec.n_precision_params() == 2) l.phi_b = c++;
    if (spec.include_effects) {
      l.w0 = c;
      c += n_obs;
    }
    l.total = c;
    return l;
  }
};

inline std::vector<std::string> param_names(const ModelSpec& spec, const Dataset& data) {
  const ParamLayout l = ParamLayout::make(spec, data.n());
  std::vector<std::string> names(static_cast<std::size_t>(l.total));
  for (int j = 0; j < l.p; ++j) names[static_cast<std::size_t>(j)] = "beta" + std::to_string(j);
  if (l.sigma2 >= 0) names[static_cast<std::size_t>(l.sigma2)] = "sigma2";
  if (l.lambda0 >= 0) {
    static const char* entries[6] = {"lambda11", "lambda21", "lambda31",
                                     "lambda22", "lambda32", "lambda33"};
    for (int j = 0; j < 6; ++j) names[static_cast<std::size_t>(l.lambda0 + j)] = entries[j];
  }
  if (l.rho >= 0) names[static_cast<std::size_t>(l.rho)] = "rho";
  if (spec.n_precision_params() == 2) {
    const bool split = spec.split_precision();
    names[static_cast<std::size_t>(l.phi_a)] = split ? "phi_l" : "phi_1";
    names[static_cast<std::size_t>(l.phi_b)] = split ? "phi_u" : "phi_2";
  } else {
    names[static_cast<std::size_t>(l.phi_a)] = "phi";
  }
  if (l.w0 >= 0)
    for (int i = 0; i < data.n(); ++i)
      names[static_cast<std::size_t>(l.w0 + i)] =
          "w." + std::to_string(data.site_ids[static_cast<std::size_t>(data.site[static_cast<std::size_t>(i)])]) +
          "." + std::to_string(data.tod[static_cast<std::size_t>(i)]) + "." +
          std::to_string(data.minute[static_cast<std::size_t>(i)] + 1);
  return names;
}

/// Stage-2 covariate source: each chain walks its own list of fitted rows.
struct CovariateSchedule {
  const Eigen::MatrixXd* fits = nullptr;           // pooled rows x n
  std::vector<std::vector<int>> chain_rows;        // per chain: retained index -> row
};

struct ChainResult {
  Eigen::MatrixXd draws;   // retained x total params
  Eigen::MatrixXd fitted;  // retained x n fitted means
  std::vector<double> acceptance;  // post-burn-in rate per block
  std::vector<int> consumed_rows;  // stage 2: fits row per retained iteration
  std::uint64_t seed = 0;
};

struct PosteriorDraws {
  ModelSpec spec;
  SplineBasis basis;
  ParamLayout layout;
  std::vector<std::string> names;
  std::vector<std::string> block_names;
  std::vector<ChainResult> chains;
  int n_obs = 0;

  int retained_per_chain() const {
    return chains.empty() ? 0 : static_cast<int>(chains[0].draws.rows());
  }
  int pooled() const { return static_cast<int>(chains.size()) * retained_per_chain(); }

  double value(int pooled_row, int col) const {
    const int r = retained_per_chain();
    return chains[static_cast<std::size_t>(pooled_row / r)].draws(pooled_row % r, col);
  }

  std::vector<double> column(int col) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(pooled()));
    for (const auto& c : chains)
      for (int r = 0; r < c.draws.rows(); ++r) out.push_back(c.draws(r, col));
    return out;
  }

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::runtime_error("unknown parameter: " + name);
  }

  Eigen::MatrixXd pooled_fitted() const {
    const int r = retained_per_chain();
    Eigen::MatrixXd out(pooled(), n_obs);
    for (std::size_t c = 0; c < chains.size(); ++c)
      out.middleRows(static_cast<int>(c) * r, r) = chains[c].fitted;
    return out;
  }

  /// Reconstruct the sampled state at a pooled row.
  ParamState state_at(int pooled_row) const {
    ParamState st;
    st.beta.resize(layout.p);
    for (int j = 0; j < layout.p; ++j) st.beta(j) = value(pooled_row, j);
    if (layout.sigma2 >= 0) st.sigma2 = value(pooled_row, layout.sigma2);
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Identity(3, 3);
    if (layout.lambda0 >= 0) {
      const double l11 = value(pooled_row, layout.lambda0 + 0);
      const double l21 = value(pooled_row, layout.lambda0 + 1);
      const double l31 = value(pooled_row, layout.lambda0 + 2);
      const double l22 = value(pooled_row, layout.lambda0 + 3);
      const double l32 = value(pooled_row, layout.lambda0 + 4);
      const double l33 = value(pooled_row, layout.lambda0 + 5);
      lambda << l11, l21, l31, l21, l22, l32, l31, l32, l33;
    }
    st.lambda_chol = Eigen::LLT<Eigen::MatrixXd>(lambda).matrixL();
    if (layout.rho >= 0) st.rho = value(pooled_row, layout.rho);
    st.phi_a = value(pooled_row, layout.phi_a);
    if (layout.phi_b >= 0) st.phi_b = value(pooled_row, layout.phi_b);
    if (layout.w0 >= 0) {
      st.w.resize(n_obs);
      for (int i = 0; i < n_obs; ++i) st.w(i) = value(pooled_row, layout.w0 + i);
    }
    return st;
  }
};

namespace detail {

/// Unit-variance AR(1) innovations at the given minute positions.
inline Eigen::VectorXd ar1_gap_sample(Rng& rng, const std::vector<int>& minutes, double rho) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(minutes.size()));
  if (minutes.empty()) return w;
  w(0) = rng.normal();
  for (std::size_t l = 1; l < minutes.size(); ++l) {
    const double r = std::pow(rho, minutes[l] - minutes[l - 1]);
    w(static_cast<Eigen::Index>(l)) =
        r * w(static_cast<Eigen::Index>(l - 1)) + std::sqrt(1.0 - r * r) * rng.normal();
  }
  return w;
}

/// Markov factorization of an AR(1) block over (possibly gapped) minutes:
/// term = -0.5*(q*log2pi + q*log(sigma2) + logdet_corr + quad_unit/sigma2).
struct BlockQuad {
  double quad_unit = 0.0;
  double logdet_corr = 0.0;
  int q = 0;
};

inline BlockQuad block_quad(const Eigen::VectorXd& w, const std::vector<int>& minutes,
                            double rho) {
  BlockQuad out;
  out.q = static_cast<int>(minutes.size());
  if (out.q == 0) return out;
  out.quad_unit = w(0) * w(0);
  for (int l = 1; l < out.q; ++l) {
    const double r = std::pow(rho, minutes[static_cast<std::size_t>(l)] -
                                       minutes[static_cast<std::size_t>(l - 1)]);
    const double cvar = 1.0 - r * r;
    const double resid = w(l) - r * w(l - 1);
    out.quad_unit += resid * resid / cvar;
    out.logdet_corr += std::log(cvar);
  }
  return out;
}

inline double block_term(const BlockQuad& bq, double sigma2) {
  return -0.5 * (bq.q * (kLog2Pi + std::log(sigma2)) + bq.logdet_corr + bq.quad_unit / sigma2);
}

/// Cross quadratic forms w_a' R(rho)^-1 w_b for the Kronecker structure.
inline Eigen::Matrix3d site_gram(const Eigen::VectorXd& w, int minutes, double rho) {
  const Ar1Block unit(1.0, rho, minutes);
  Eigen::Matrix3d g;
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      const double v =
          unit.bilinear(w.segment(a * minutes, minutes), w.segment(b * minutes, minutes));
      g(a, b) = v;
      g(b, a) = v;
    }
  return g;
}

inline double site_term(const Eigen::Matrix3d& g, const Eigen::MatrixXd& lambda_inv,
                        double lambda_logdet, double rho, int minutes) {
  const double quad = (lambda_inv.array() * g.array()).sum();
  const double logdet = minutes * lambda_logdet + 3.0 * (minutes - 1) * std::log(1.0 - rho * rho);
  return -0.5 * (3.0 * minutes * kLog2Pi + logdet + quad);
}

}  // namespace detail

/// One chain of the adaptive Metropolis-within-Gibbs sampler.
class ChainSampler {
 public:
  ChainSampler(const ModelSpec& spec, const Dataset& data, const SplineBasis& basis,
               std::uint64_t seed, const Eigen::MatrixXd* fits = nullptr,
               std::vector<int> rows = {})
      : engine_(spec, data, basis),
        spec_(spec),
        rng_(seed),
        seed_(seed),
        fits_(fits),
        rows_(std::move(rows)) {
    const auto& d = engine_.data();
    n_ = d.n();
    layout_ = ParamLayout::make(spec_, n_);
    blocks_ = engine_.blocks();
    sites_ = engine_.sites();
    block_site_.resize(blocks_.size());
    for (std::size_t s = 0; s < sites_.size(); ++s)
      for (int b : sites_[s].blocks) block_site_[static_cast<std::size_t>(b)] = static_cast<int>(s);

    scale_beta_.log_scale = std::log(0.03);
    scale_beta_.target = 0.234;
    scale_effects_.assign(blocks_.size(), AdaptiveScale{std::log(0.03), 0.234});
    scale_sigma2_.log_scale = std::log(0.3);
    scale_rho_.log_scale = std::log(0.3);
    scale_lambda_.log_scale = std::log(0.05);
    scale_lambda_.target = 0.234;
    scale_phi_a_.log_scale = std::log(0.3);
    scale_phi_b_.log_scale = std::log(0.3);
  }

  ChainResult run() {
    const auto& mc = spec_.mcmc;
    mc.validate();
    const int retained = mc.retained();
    if (fits_ && static_cast<int>(rows_.size()) != retained)
      throw std::invalid_argument("covariate schedule length mismatch");

    state_ = engine_.initial_state(rng_);
    if (fits_) switch_row(row_for_iteration(0));
    recompute_all();

    ChainResult res;
    res.seed = seed_;
    res.draws.resize(retained, layout_.total);
    res.fitted.resize(retained, n_);
    if (fits_) res.consumed_rows.resize(static_cast<std::size_t>(retained));

    int stored = 0;
    for (int iter = 0; iter < mc.iterations; ++iter) {
      const bool post_burn = iter >= mc.burn_in;
      if (fits_) {
        const int want = row_for_iteration(iter);
        if (want != current_row_) switch_row(want);
      }
      sweep(post_burn);
      if (post_burn && (iter - mc.burn_in) % mc.thin == 0 && stored < retained) {
        record(res, stored);
        if (fits_) res.consumed_rows[static_cast<std::size_t>(stored)] = current_row_;
        ++stored;
      }
      if ((iter + 1) % mc.adapt_batch == 0) end_batches(post_burn);
    }
    res.acceptance = collect_rates();
    return res;
  }

  static std::vector<std::string> block_labels(const ModelSpec& spec, const Dataset& data) {
    std::vector<std::string> out;
    out.push_back("beta");
    if (spec.include_effects) {
      const auto blocks = build_blocks(data);
      for (const auto& b : blocks)
        out.push_back("w." + std::to_string(data.site_ids[static_cast<std::size_t>(b.site)]) +
                      "." + std::to_string(b.tod));
      if (spec.uses_lambda())
        out.push_back("lambda");
      else
        out.push_back("sigma2");
      out.push_back("rho");
    }
    out.push_back(spec.n_precision_params() == 2 ? (spec.split_precision() ? "phi_l" : "phi_1")
                                                 : "phi");
    if (spec.n_precision_params() == 2)
      out.push_back(spec.split_precision() ? "phi_u" : "phi_2");
    return out;
  }

 private:
  int row_for_iteration(int iter) const {
    const auto& mc = spec_.mcmc;
    const int m = static_cast<int>(rows_.size());
    if (iter < mc.burn_in) return rows_[static_cast<std::size_t>((iter / mc.thin) % m)];
    const int idx = std::min((iter - mc.burn_in) / mc.thin, m - 1);
    return rows_[static_cast<std::size_t>(idx)];
  }

  void switch_row(int row) {
    current_row_ = row;
    engine_.set_covariate(fits_->row(row).transpose());
    if (!initialized_) return;
    recompute_all();
  }

  void recompute_all() {
    initialized_ = true;
    eta_ = engine_.design() * state_.beta;
    mu_.resize(n_);
    ll_.resize(n_);
    phi_obs_.resize(n_);
    for (int i = 0; i < n_; ++i) phi_obs_(i) = engine_.obs_phi(i, state_);
    for (int i = 0; i < n_; ++i) {
      mu_(i) = inv_logit(eta_(i) + (spec_.include_effects ? state_.w(i) : 0.0));
      ll_(i) = beta_logdensity_unchecked(engine_.data().value[static_cast<std::size_t>(i)],
                                         mu_(i), phi_obs_(i));
    }
    if (spec_.include_effects) {
      if (spec_.uses_lambda()) {
        refresh_lambda_cache();
        grams_.resize(sites_.size());
        dense_terms_.assign(sites_.size(), 0.0);
        for (std::size_t s = 0; s < sites_.size(); ++s) refresh_site(s);
      } else {
        quads_.resize(blocks_.size());
        for (std::size_t b = 0; b < blocks_.size(); ++b) refresh_block_quad(b);
      }
    }
  }

  void refresh_lambda_cache() {
    const Eigen::MatrixXd l = state_.lambda_chol;
    lambda_inv_ = l.transpose()
                      .triangularView<Eigen::Upper>()
                      .solve(l.triangularView<Eigen::Lower>().solve(
                          Eigen::MatrixXd::Identity(l.rows(), l.cols())));
    lambda_logdet_ = 2.0 * l.diagonal().array().log().sum();
  }

  void refresh_block_quad(std::size_t b) {
    const auto& blk = blocks_[b];
    quads_[b] = detail::block_quad(state_.w.segment(blk.first, blk.count), blk.minutes,
                                   state_.rho);
  }

  void refresh_site(std::size_t s) {
    const auto& si = sites_[s];
    if (si.complete) {
      grams_[s] = detail::site_gram(state_.w.segment(si.first, si.count),
                                    engine_.data().n_minutes, state_.rho);
    } else {
      dense_terms_[s] = engine_.effects_term_site(static_cast<int>(s), state_);
    }
  }

  double total_ll() const { return ll_.sum(); }

  double effects_total() const {
    if (!spec_.include_effects) return 0.0;
    double acc = 0.0;
    if (spec_.uses_lambda()) {
      for (std::size_t s = 0; s < sites_.size(); ++s)
        acc += sites_[s].complete
                   ? detail::site_term(grams_[s], lambda_inv_, lambda_logdet_, state_.rho,
                                       engine_.data().n_minutes)
                   : dense_terms_[s];
    } else {
      for (const auto& q : quads_) acc += detail::block_term(q, state_.sigma2);
    }
    return acc;
  }

  void sweep(bool post_burn) {
    update_beta(post_burn);
    if (spec_.include_effects) {
      for (std::size_t b = 0; b < blocks_.size(); ++b) update_effects(b, post_burn);
      update_rho(post_burn);
      if (spec_.uses_lambda())
        update_lambda(post_burn);
      else
        update_sigma2(post_burn);
    }
    update_phi(post_burn, true);
    if (spec_.n_precision_params() == 2) update_phi(post_burn, false);
  }

  void update_beta(bool post_burn) {
    const double s = scale_beta_.scale();
    Eigen::VectorXd prop = state_.beta;
    for (int j = 0; j < prop.size(); ++j) prop(j) += s * rng_.normal();
    const Eigen::VectorXd eta_new = engine_.design() * prop;
    Eigen::VectorXd mu_new(n_), ll_new(n_);
    double delta = 0.0;
    for (int i = 0; i < n_; ++i) {
      mu_new(i) = inv_logit(eta_new(i) + (spec_.include_effects ? state_.w(i) : 0.0));
      ll_new(i) = beta_logdensity_unchecked(engine_.data().value[static_cast<std::size_t>(i)],
                                            mu_new(i), phi_obs_(i));
      delta += ll_new(i) - ll_(i);
    }
    for (int j = 0; j < prop.size(); ++j)
      delta += log_normal_prior(prop(j), spec_.priors.beta_variance) -
               log_normal_prior(state_.beta(j), spec_.priors.beta_variance);
    const bool ok = accept_mh(delta, rng_);
    if (ok) {
      state_.beta = prop;
      eta_ = eta_new;
      mu_ = mu_new;
      ll_ = ll_new;
    }
    scale_beta_.record(ok, post_burn);
  }

  void update_effects(std::size_t b, bool post_burn) {
    const auto& blk = blocks_[b];
    const double s = scale_effects_[b].scale();
    const Eigen::VectorXd step = detail::ar1_gap_sample(rng_, blk.minutes, state_.rho);
    Eigen::VectorXd w_new = state_.w.segment(blk.first, blk.count) + s * step;

    Eigen::VectorXd mu_new(blk.count), ll_new(blk.count);
    double delta = 0.0;
    for (int t = 0; t < blk.count; ++t) {
      const int i = blk.first + t;
      mu_new(t) = inv_logit(eta_(i) + w_new(t));
      ll_new(t) = beta_logdensity_unchecked(engine_.data().value[static_cast<std::size_t>(i)],
                                            mu_new(t), phi_obs_(i));
      delta += ll_new(t) - ll_(i);
    }

    if (spec_.uses_lambda()) {
      const std::size_t si = static_cast<std::size_t>(block_site_[b]);
      const auto& site = sites_[si];
      ParamState tmp = state_;  // site slice with the proposed block
      tmp.w.segment(blk.first, blk.count) = w_new;
      double term_new, term_old;
      Eigen::Matrix3d g_new;
      if (site.complete) {
        g_new = detail::site_gram(tmp.w.segment(site.first, site.count),
                                  engine_.data().n_minutes, state_.rho);
        term_new = detail::site_term(g_new, lambda_inv_, lambda_logdet_, state_.rho,
                                     engine_.data().n_minutes);
        term_old = detail::site_term(grams_[si], lambda_inv_, lambda_logdet_, state_.rho,
                                     engine_.data().n_minutes);
      } else {
        term_new = engine_.effects_term_site(block_site_[b], tmp);
        term_old = dense_terms_[si];
      }
      delta += term_new - term_old;
      const bool ok = accept_mh(delta, rng_);
      if (ok) {
        state_.w.segment(blk.first, blk.count) = w_new;
        for (int t = 0; t < blk.count; ++t) {
          mu_(blk.first + t) = mu_new(t);
          ll_(blk.first + t) = ll_new(t);
        }
        if (site.complete)
          grams_[si] = g_new;
        else
          dense_terms_[si] = term_new;
      }
      scale_effects_[b].record(ok, post_burn);
    } else {
      const auto bq_new = detail::block_quad(w_new, blk.minutes, state_.rho);
      delta += detail::block_term(bq_new, state_.sigma2) -
               detail::block_term(quads_[b], state_.sigma2);
      const bool ok = accept_mh(delta, rng_);
      if (ok) {
        state_.w.segment(blk.first, blk.count) = w_new;
        for (int t = 0; t < blk.count; ++t) {
          mu_(blk.first + t) = mu_new(t);
          ll_(blk.first + t) = ll_new(t);
        }
        quads_[b] = bq_new;
      }
      scale_effects_[b].record(ok, post_burn);
    }
  }

  void update_sigma2(bool post_burn) {
    const double theta = std::log(state_.sigma2);
    const double theta_new = theta + scale_sigma2_.scale() * rng_.normal();
    const double prop = std::exp(theta_new);
    double delta = theta_new - theta;  // log-transform Jacobian
    delta += log_inverse_gamma(prop, spec_.priors.sigma2_shape, spec_.priors.sigma2_scale) -
             log_inverse_gamma(state_.sigma2, spec_.priors.sigma2_shape,
                               spec_.priors.sigma2_scale);
    for (const auto& q : quads_)
      delta += detail::block_term(q, prop) - detail::block_term(q, state_.sigma2);
    const bool ok = accept_mh(delta, rng_);
    if (ok) state_.sigma2 = prop;
    scale_sigma2_.record(ok, post_burn);
  }

  void update_rho(bool post_burn) {
    const auto& pr = spec_.priors;
    const double span = pr.rho_hi - pr.rho_lo;
    const double u = (state_.rho - pr.rho_lo) / span;
    const double theta = std::log(u / (1.0 - u));
    const double theta_new = theta + scale_rho_.scale() * rng_.normal();
    const double rho_new = pr.rho_lo + span / (1.0 + std::exp(-theta_new));
    if (!(rho_new > pr.rho_lo && rho_new < pr.rho_hi)) {  // saturated transform
      scale_rho_.record(false, post_burn);
      return;
    }
    double delta = std::log((rho_new - pr.rho_lo) * (pr.rho_hi - rho_new) / span) -
                   std::log((state_.rho - pr.rho_lo) * (pr.rho_hi - state_.rho) / span);
    if (spec_.uses_lambda()) {
      double term_new = 0.0, term_old = 0.0;
      std::vector<Eigen::Matrix3d> g_new(sites_.size());
      std::vector<double> dense_new(sites_.size(), 0.0);
      ParamState tmp = state_;
      tmp.rho = rho_new;
      for (std::size_t s = 0; s < sites_.size(); ++s) {
        const auto& si = sites_[s];
        if (si.complete) {
          g_new[s] = detail::site_gram(state_.w.segment(si.first, si.count),
                                       engine_.data().n_minutes, rho_new);
          term_new += detail::site_term(g_new[s], lambda_inv_, lambda_logdet_, rho_new,
                                        engine_.data().n_minutes);
          term_old += detail::site_term(grams_[s], lambda_inv_, lambda_logdet_, state_.rho,
                                        engine_.data().n_minutes);
        } else {
          dense_new[s] = engine_.effects_term_site(static_cast<int>(s), tmp);
          term_new += dense_new[s];
          term_old += dense_terms_[s];
        }
      }
      delta += term_new - term_old;
      const bool ok = accept_mh(delta, rng_);
      if (ok) {
        state_.rho = rho_new;
        for (std::size_t s = 0; s < sites_.size(); ++s) {
          if (sites_[s].complete)
            grams_[s] = g_new[s];
          else
            dense_terms_[s] = dense_new[s];
        }
      }
      scale_rho_.record(ok, post_burn);
    } else {
      std::vector<detail::BlockQuad> q_new(blocks_.size());
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& blk = blocks_[b];
        q_new[b] = detail::block_quad(state_.w.segment(blk.first, blk.count), blk.minutes,
                                      rho_new);
        delta += detail::block_term(q_new[b], state_.sigma2) -
                 detail::block_term(quads_[b], state_.sigma2);
      }
      const bool ok = accept_mh(delta, rng_);
      if (ok) {
        state_.rho = rho_new;
        quads_ = std::move(q_new);
      }
      scale_rho_.record(ok, post_burn);
    }
  }

  void update_lambda(bool post_burn) {
    // random walk on (log diag, off-diag) of the Cholesky factor
    const Eigen::MatrixXd& l = state_.lambda_chol;
    Eigen::VectorXd theta(6);
    theta << std::log(l(0, 0)), l(1, 0), std::log(l(1, 1)), l(2, 0), l(2, 1), std::log(l(2, 2));
    Eigen::VectorXd theta_new = theta;
    const double s = scale_lambda_.scale();
    for (int j = 0; j < 6; ++j) theta_new(j) += s * rng_.normal();

    Eigen::MatrixXd l_new = Eigen::MatrixXd::Zero(3, 3);
    l_new(0, 0) = std::exp(theta_new(0));
    l_new(1, 0) = theta_new(1);
    l_new(1, 1) = std::exp(theta_new(2));
    l_new(2, 0) = theta_new(3);
    l_new(2, 1) = theta_new(4);
    l_new(2, 2) = std::exp(theta_new(5));
    if (!l_new.allFinite()) {
      scale_lambda_.record(false, post_burn);
      return;
    }

    Eigen::MatrixXd inv_new = l_new.transpose().triangularView<Eigen::Upper>().solve(
        l_new.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(3, 3)));
    const double logdet_new = 2.0 * l_new.diagonal().array().log().sum();

    // Jacobian of theta -> lambda: 3*log2 + 4 log L11 + 3 log L22 + 2 log L33
    const double jac_new = 4.0 * theta_new(0) + 3.0 * theta_new(2) + 2.0 * theta_new(5);
    const double jac_old = 4.0 * theta(0) + 3.0 * theta(2) + 2.0 * theta(5);
    double delta = jac_new - jac_old;
    delta += log_inverse_wishart(inv_new, logdet_new, spec_.priors.wishart_df,
                                 spec_.priors.wishart_scale) -
             log_inverse_wishart(lambda_inv_, lambda_logdet_, spec_.priors.wishart_df,
                                 spec_.priors.wishart_scale);

    ParamState tmp = state_;
    tmp.lambda_chol = l_new;
    std::vector<double> dense_new(sites_.size(), 0.0);
    for (std::size_t si = 0; si < sites_.size(); ++si) {
      const auto& site = sites_[si];
      if (site.complete) {
        delta += detail::site_term(grams_[si], inv_new, logdet_new, state_.rho,
                                   engine_.data().n_minutes) -
                 detail::site_term(grams_[si], lambda_inv_, lambda_logdet_, state_.rho,
                                   engine_.data().n_minutes);
      } else {
        dense_new[si] = engine_.effects_term_site(static_cast<int>(si), tmp);
        delta += dense_new[si] - dense_terms_[si];
      }
    }
    const bool ok = accept_mh(delta, rng_);
    if (ok) {
      state_.lambda_chol = l_new;
      lambda_inv_ = inv_new;
      lambda_logdet_ = logdet_new;
      for (std::size_t si = 0; si < sites_.size(); ++si)
        if (!sites_[si].complete) dense_terms_[si] = dense_new[si];
    }
    scale_lambda_.record(ok, post_burn);
  }

  void update_phi(bool post_burn, bool first) {
    AdaptiveScale& sc = first ? scale_phi_a_ : scale_phi_b_;
    const double cur = first ? state_.phi_a : state_.phi_b;
    const double theta = std::log(cur);
    const double theta_new = theta + sc.scale() * rng_.normal();
    const double prop = std::exp(theta_new);

    double delta = theta_new - theta;
    const auto& pr = spec_.priors;
    if (spec_.exp_precision())
      delta += log_uniform(prop, 0.0, pr.phi_uniform_hi) - log_uniform(cur, 0.0, pr.phi_uniform_hi);
    else
      delta += log_inverse_gamma(prop, pr.phi_shape, pr.phi_scale) -
               log_inverse_gamma(cur, pr.phi_shape, pr.phi_scale);
    if (!std::isfinite(delta)) {
      sc.record(false, post_burn);
      return;
    }

    // observations whose precision involves this parameter
    const std::vector<int>* subset = nullptr;
    if (spec_.split_precision()) subset = first ? &engine_.lower_obs() : &engine_.upper_obs();

    ParamState tmp = state_;
    (first ? tmp.phi_a : tmp.phi_b) = prop;
    Eigen::VectorXd phi_new = phi_obs_;
    Eigen::VectorXd ll_new = ll_;
    auto eval_obs = [&](int i) {
      phi_new(i) = engine_.obs_phi(i, tmp);
      ll_new(i) = beta_logdensity_unchecked(engine_.data().value[static_cast<std::size_t>(i)],
                                            mu_(i), phi_new(i));
      delta += ll_new(i) - ll_(i);
    };
    if (subset) {
      for (int i : *subset) eval_obs(i);
    } else {
      for (int i = 0; i < n_; ++i) eval_obs(i);
    }
    const bool ok = accept_mh(delta, rng_);
    if (ok) {
      (first ? state_.phi_a : state_.phi_b) = prop;
      phi_obs_ = phi_new;
      ll_ = ll_new;
    }
    sc.record(ok, post_burn);
  }

  void end_batches(bool post_burn) {
    // adaptation is frozen once burn-in completes
    const bool freeze = post_burn;
    auto finish = [&](AdaptiveScale& s) {
      s.frozen = freeze;
      s.end_batch();
    };
    finish(scale_beta_);
    for (auto& s : scale_effects_) finish(s);
    finish(scale_sigma2_);
    finish(scale_rho_);
    finish(scale_lambda_);
    finish(scale_phi_a_);
    finish(scale_phi_b_);
  }

  void record(ChainResult& res, int row) {
    auto& d = res.draws;
    for (int j = 0; j < layout_.p; ++j) d(row, j) = state_.beta(j);
    if (layout_.sigma2 >= 0) d(row, layout_.sigma2) = state_.sigma2;
    if (layout_.lambda0 >= 0) {
      const Eigen::MatrixXd lambda = state_.lambda();
      d(row, layout_.lambda0 + 0) = lambda(0, 0);
      d(row, layout_.lambda0 + 1) = lambda(1, 0);
      d(row, layout_.lambda0 + 2) = lambda(2, 0);
      d(row, layout_.lambda0 + 3) = lambda(1, 1);
      d(row, layout_.lambda0 + 4) = lambda(2, 1);
      d(row, layout_.lambda0 + 5) = lambda(2, 2);
    }
    if (layout_.rho >= 0) d(row, layout_.rho) = state_.rho;
    d(row, layout_.phi_a) = state_.phi_a;
    if (layout_.phi_b >= 0) d(row, layout_.phi_b) = state_.phi_b;
    if (layout_.w0 >= 0)
      for (int i = 0; i < n_; ++i) d(row, layout_.w0 + i) = state_.w(i);
    res.fitted.row(row) = mu_.transpose();
  }

  std::vector<double> collect_rates() const {
    std::vector<double> out;
    out.push_back(scale_beta_.post_rate());
    if (spec_.include_effects) {
      for (const auto& s : scale_effects_) out.push_back(s.post_rate());
      out.push_back(spec_.uses_lambda() ? scale_lambda_.post_rate() : scale_sigma2_.post_rate());
      out.push_back(scale_rho_.post_rate());
    }
    out.push_back(scale_phi_a_.post_rate());
    if (spec_.n_precision_params() == 2) out.push_back(scale_phi_b_.post_rate());
    return out;
  }

  ModelEngine engine_;
  ModelSpec spec_;
  Rng rng_;
  std::uint64_t seed_;
  const Eigen::MatrixXd* fits_;
  std::vector<int> rows_;
  int current_row_ = -1;
  bool initialized_ = false;

  int n_ = 0;
  ParamLayout layout_;
  std::vector<BlockInfo> blocks_;
  std::vector<SiteInfo> sites_;
  std::vector<int> block_site_;

  ParamState state_;
  Eigen::VectorXd eta_, mu_, ll_, phi_obs_;
  std::vector<detail::BlockQuad> quads_;
  std::vector<Eigen::Matrix3d> grams_;
  std::vector<double> dense_terms_;
  Eigen::MatrixXd lambda_inv_ = Eigen::MatrixXd::Identity(3, 3);
  double lambda_logdet_ = 0.0;

  AdaptiveScale scale_beta_, scale_sigma2_, scale_rho_, scale_lambda_, scale_phi_a_,
      scale_phi_b_;
  std::vector<AdaptiveScale> scale_effects_;
};

/// Fit the model with n_chains independent chains from derived seeds.
inline PosteriorDraws run_chains(const ModelSpec& spec, const Dataset& data,
                                 const SplineBasis& basis,
                                 const CovariateSchedule* schedule = nullptr) {
  spec.mcmc.validate();
  if (data.n() == 0) throw std::invalid_argument("empty dataset");
  if (spec.mcmc.n_chains < 2) warn("fewer than 2 chains; convergence diagnostics unavailable");

  PosteriorDraws out;
  out.spec = spec;
  out.basis = basis;
  out.layout = ParamLayout::make(spec, data.n());
  out.names = param_names(spec, data);
  out.block_names = ChainSampler::block_labels(spec, data);
  out.n_obs = data.n();
  out.chains.resize(static_cast<std::size_t>(spec.mcmc.n_chains));

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(spec.mcmc.n_chains));
  for (int c = 0; c < spec.mcmc.n_chains; ++c) {
    threads.emplace_back([&, c] {
      try {
        const std::uint64_t seed = derive_seed(spec.mcmc.seed, 0x5eedu, static_cast<std::uint64_t>(c));
        ChainSampler sampler(spec, data, basis, seed,
                             schedule ? schedule->fits : nullptr,
                             schedule ? schedule->chain_rows[static_cast<std::size_t>(c)]
                                      : std::vector<int>{});
        out.chains[static_cast<std::size_t>(c)] = sampler.run();
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace sonomap
