#include "fedglmm/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "fedglmm/errors.hpp"
#include "fedglmm/numeric.hpp"

namespace fedglmm::glmm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ln(2*pi)/2

// Relative floor on the smallest LDLT pivot before a symmetric matrix is
// treated as numerically indefinite.
constexpr double kPivotRelTol = 1e-13;

Eigen::VectorXd linear_predictor(const SiteData& site, const Eigen::VectorXd& beta, double mu) {
  return (site.design * beta).array() + mu;
}

struct PdSolve {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  double pivot_min = 0.0;
  double pivot_max = 0.0;
  bool positive_definite = false;
};

// Factorizes A (intended positive definite) and records pivot diagnostics.
PdSolve factorize_pd(const Eigen::MatrixXd& a) {
  PdSolve out;
  out.ldlt.compute(a);
  const Eigen::VectorXd d = out.ldlt.vectorD();
  out.pivot_min = d.minCoeff();
  out.pivot_max = d.maxCoeff();
  out.positive_definite = out.ldlt.info() == Eigen::Success && out.pivot_min > 0.0 &&
                          out.pivot_min > kPivotRelTol * out.pivot_max;
  return out;
}

std::string pivot_diag(const PdSolve& f) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "pivot range [%.3e, %.3e]", f.pivot_min, f.pivot_max);
  return buf;
}

}  // namespace

void validate_site_data(const SiteData& site) {
  if (site.design.rows() < 1 || site.design.cols() < 1) {
    throw ParamError("site data for '" + site.snp_id + "' has an empty design");
  }
  if (site.phenotype.size() != site.design.rows()) {
    throw ParamError("site data for '" + site.snp_id + "' has " +
                     std::to_string(site.phenotype.size()) + " phenotypes for " +
                     std::to_string(site.design.rows()) + " design rows");
  }
  if (!site.design.allFinite()) {
    throw ParamError("site data for '" + site.snp_id + "' has non-finite design entries");
  }
  for (Eigen::Index j = 0; j < site.phenotype.size(); ++j) {
    const double y = site.phenotype[j];
    if (y != 0.0 && y != 1.0) {
      throw ParamError("phenotype entry " + std::to_string(j) + " for '" + site.snp_id +
                       "' is " + num::format_g17(y) + ", expected 0 or 1");
    }
  }
}

SiteData make_site_data(const SiteDataset& ds, Eigen::Index variant_index) {
  if (variant_index < 0 || variant_index >= ds.genotypes.n_variants()) {
    throw ParamError("variant index " + std::to_string(variant_index) + " out of range for site '" +
                     ds.site_id + "'");
  }
  const Eigen::Index n = ds.genotypes.n_samples();
  const Eigen::Index p = ds.covariates.values.rows();
  SiteData site;
  site.snp_id = ds.genotypes.variant_ids[static_cast<std::size_t>(variant_index)];
  site.design.resize(n, p + 1);
  site.design.col(0) = ds.genotypes.dosages.row(variant_index).transpose();
  if (p > 0) {
    if (ds.covariates.values.cols() != n) {
      throw ParamError("site '" + ds.site_id + "' covariates cover " +
                       std::to_string(ds.covariates.values.cols()) + " samples, genotypes " +
                       std::to_string(n));
    }
    site.design.rightCols(p) = ds.covariates.values.transpose();
  }
  site.phenotype = ds.phenotype;
  return site;
}

StatsPayload payload_zero_like(const StatsPayload& shape) {
  StatsPayload out;
  out.gradient = Eigen::VectorXd::Zero(shape.gradient.size());
  out.hessian = Eigen::MatrixXd::Zero(shape.hessian.rows(), shape.hessian.cols());
  return out;
}

void payload_add(StatsPayload& acc, const StatsPayload& term) {
  acc.gradient += term.gradient;
  acc.hessian += term.hessian;
  acc.mu_hat += term.mu_hat;
  acc.mu_curvature += term.mu_curvature;
  acc.mu_second_moment += term.mu_second_moment;
  acc.laplace_loglik += term.laplace_loglik;
}

void payload_subtract(StatsPayload& acc, const StatsPayload& term) {
  acc.gradient -= term.gradient;
  acc.hessian -= term.hessian;
  acc.mu_hat -= term.mu_hat;
  acc.mu_curvature -= term.mu_curvature;
  acc.mu_second_moment -= term.mu_second_moment;
  acc.laplace_loglik -= term.laplace_loglik;
}

double site_conditional_loglik(const SiteData& site, const Eigen::VectorXd& beta, double mu,
                               double sigma2) {
  if (!std::isfinite(mu) || !std::isfinite(sigma2) || sigma2 <= 0.0 || !beta.allFinite()) {
    throw ParamError("site_conditional_loglik: non-finite or non-positive inputs");
  }
  const Eigen::VectorXd eta = linear_predictor(site, beta, mu);
  double ll = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    ll += site.phenotype[j] * eta[j] - num::log1p_exp(eta[j]);
  }
  ll += -kHalfLog2Pi - 0.5 * std::log(sigma2) - mu * mu / (2.0 * sigma2);
  return ll;
}

RandomEffectMode fit_site_random_effect(const SiteData& site, const Eigen::VectorXd& beta,
                                        double sigma2, double mu0) {
  if (sigma2 < kSigma2Floor) {
    throw ParamError("fit_site_random_effect: sigma2 below floor: " + num::format_g17(sigma2));
  }
  const Eigen::VectorXd xb = site.design * beta;
  const double y_sum = site.phenotype.sum();
  const auto curvature_at = [&](double m) {
    double w_sum = 0.0;
    for (Eigen::Index j = 0; j < xb.size(); ++j) {
      const double p = num::sigmoid(xb[j] + m);
      w_sum += p * (1.0 - p);
    }
    return w_sum + 1.0 / sigma2;  // -l'' > 0 always
  };
  double mu = mu0;
  for (int it = 1; it <= kMaxInnerIterations; ++it) {
    double p_sum = 0.0;
    double w_sum = 0.0;
    for (Eigen::Index j = 0; j < xb.size(); ++j) {
      const double p = num::sigmoid(xb[j] + mu);
      p_sum += p;
      w_sum += p * (1.0 - p);
    }
    const double score = y_sum - p_sum - mu / sigma2;
    const double delta = score / (w_sum + 1.0 / sigma2);
    mu += delta;
    if (!std::isfinite(mu)) {
      throw Error("random-effect update produced a non-finite value for '" + site.snp_id + "'");
    }
    if (std::abs(delta) < 1e-10) {
      return {mu, curvature_at(mu), it};
    }
  }
  throw Error("random-effect maximization did not converge for '" + site.snp_id +
              "' (last mu = " + num::format_g17(mu) + ")");
}

LocalStats site_local_stats(const SiteData& site, const Eigen::VectorXd& beta, double sigma2,
                            const RandomEffectMode& mode) {
  const Eigen::Index k = site.design.cols();
  const Eigen::VectorXd eta = linear_predictor(site, beta, mode.mu_hat);
  Eigen::VectorXd p(eta.size());
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    p[j] = num::sigmoid(eta[j]);
    w[j] = p[j] * (1.0 - p[j]);
  }

  LocalStats out;
  out.snp_id = site.snp_id;
  out.n_i = static_cast<long>(site.n());
  StatsPayload& pay = out.payload;
  pay.gradient = site.design.transpose() * (site.phenotype - p);
  const Eigen::MatrixXd h_bb = -(site.design.transpose() * w.asDiagonal() * site.design);
  const Eigen::VectorXd h_bm = -(site.design.transpose() * w);
  const double l_mm = -mode.mu_curvature;  // -sum(w) - 1/sigma2
  pay.hessian = h_bb - (h_bm * h_bm.transpose()) / l_mm;
  pay.mu_hat = mode.mu_hat;
  pay.mu_curvature = mode.mu_curvature;
  pay.mu_second_moment = mode.mu_hat * mode.mu_hat + 1.0 / mode.mu_curvature;
  pay.laplace_loglik = site_conditional_loglik(site, beta, mode.mu_hat, sigma2) + kHalfLog2Pi -
                       0.5 * std::log(mode.mu_curvature);

  const PdSolve f = factorize_pd(-pay.hessian);
  if (f.positive_definite) {
    const Eigen::MatrixXd cov = f.ldlt.solve(Eigen::MatrixXd::Identity(k, k));
    out.local_se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    out.hessian_singular = true;
  }
  return out;
}

Eigen::VectorXd newton_step(const Eigen::VectorXd& beta_prev, const Eigen::VectorXd& grad_global,
                            const Eigen::MatrixXd& hess_global) {
  if (grad_global.size() != beta_prev.size() || hess_global.rows() != beta_prev.size() ||
      hess_global.cols() != beta_prev.size()) {
    throw ParamError("newton_step: dimension mismatch");
  }
  const PdSolve f = factorize_pd(-hess_global);
  if (!f.positive_definite) {
    throw SingularHessianError("global Hessian is singular or indefinite, " + pivot_diag(f));
  }
  // beta_new = beta_prev - H^-1 g = beta_prev + (-H)^-1 g
  return beta_prev + f.ldlt.solve(grad_global);
}

double update_sigma2(std::span<const double> mu_hats, std::span<const double> mu_curvatures) {
  if (mu_hats.empty() || mu_hats.size() != mu_curvatures.size()) {
    throw ParamError("update_sigma2: need matching non-empty mu and curvature vectors");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_hats.size(); ++i) {
    if (!(mu_curvatures[i] > 0.0)) {
      throw ParamError("update_sigma2: curvature " + std::to_string(i) + " not positive");
    }
    sum += mu_hats[i] * mu_hats[i] + 1.0 / mu_curvatures[i];
  }
  return std::max(kSigma2Floor, sum / static_cast<double>(mu_hats.size()));
}

double update_sigma2_from_moment_sum(double second_moment_sum, long n_sites) {
  if (n_sites < 1) throw ParamError("update_sigma2: no sites");
  return std::max(kSigma2Floor, second_moment_sum / static_cast<double>(n_sites));
}

WaldStats wald_inference(const Eigen::VectorXd& beta, const Eigen::MatrixXd& hess_global) {
  const Eigen::Index k = beta.size();
  if (hess_global.rows() != k || hess_global.cols() != k) {
    throw ParamError("wald_inference: dimension mismatch");
  }
  const PdSolve f = factorize_pd(-hess_global);
  if (!f.positive_definite) {
    throw SingularHessianError("information matrix is singular or indefinite, " + pivot_diag(f));
  }
  const Eigen::MatrixXd cov = f.ldlt.solve(Eigen::MatrixXd::Identity(k, k));
  WaldStats out;
  out.se.resize(k);
  out.z.resize(k);
  out.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double v = cov(j, j);
    if (!(v > 0.0)) {
      throw SingularHessianError("non-positive variance estimate at coefficient " +
                                 std::to_string(j));
    }
    out.se[j] = std::sqrt(v);
    out.z[j] = beta[j] / out.se[j];
    out.p[j] = num::normal_two_sided_p(out.z[j]);
  }
  return out;
}

RoundAggregate aggregate(std::span<const LocalStats> stats) {
  if (stats.empty()) throw ProtocolError("aggregate: empty round");
  const Eigen::Index k = stats.front().payload.gradient.size();
  RoundAggregate agg;
  agg.payload_sum = payload_zero_like(stats.front().payload);
  agg.all_mu_converged = true;
  for (const LocalStats& s : stats) {
    if (s.snp_id != stats.front().snp_id) {
      throw ProtocolError("aggregate: mixed snp ids '" + stats.front().snp_id + "' and '" +
                          s.snp_id + "'");
    }
    if (s.payload.gradient.size() != k || s.payload.hessian.rows() != k ||
        s.payload.hessian.cols() != k) {
      throw ProtocolError("aggregate: dimension mismatch from a site for '" + s.snp_id + "'");
    }
    payload_add(agg.payload_sum, s.payload);
    agg.n_total += s.n_i;
    agg.n_sites += 1;
    agg.all_mu_converged = agg.all_mu_converged && s.mu_converged;
    agg.any_singular = agg.any_singular || s.hessian_singular;
  }
  return agg;
}

GlmmFitState::GlmmFitState(std::string snp_id, int n_coefficients, const FitOptions& options)
    : options_(options) {
  if (n_coefficients < 1) throw ParamError("fit: need at least one coefficient");
  if (options.sigma2_init < kSigma2Floor) {
    throw ParamError("fit: sigma2_init below floor");
  }
  result_.snp_id = std::move(snp_id);
  beta_cur_ = Eigen::VectorXd::Zero(n_coefficients);
  sigma2_cur_ = options.sigma2_init;
  sigma2_try_ = options.sigma2_init;
}

std::optional<EvalRequest> GlmmFitState::next_request() const {
  if (done_) return std::nullopt;
  EvalRequest req;
  req.round = rounds_ + 1;
  if (!have_accepted_) {
    req.beta = beta_cur_;
    req.sigma2 = sigma2_cur_;
  } else {
    req.beta = beta_try_;
    req.sigma2 = sigma2_try_;
  }
  return req;
}

void GlmmFitState::finish(FitStatus status, bool converged) {
  done_ = true;
  result_.status = status;
  result_.converged = converged;
  result_.beta = beta_cur_;
  result_.sigma2 = sigma2_cur_;
  result_.n_iterations = rounds_;
  if (have_accepted_ && (status == FitStatus::kOk || status == FitStatus::kMaxIterations)) {
    try {
      result_.wald = wald_inference(beta_cur_, hess_cur_);
      result_.inference_ok = true;
    } catch (const SingularHessianError&) {
      result_.inference_ok = false;
    }
  }
}

void GlmmFitState::accept_round(const RoundAggregate& agg) {
  if (have_accepted_) {
    beta_cur_ = beta_try_;
    sigma2_cur_ = sigma2_try_;
  }
  loglik_cur_ = agg.payload_sum.laplace_loglik;
  grad_cur_ = agg.payload_sum.gradient;
  hess_cur_ = agg.payload_sum.hessian;
  moment_sum_cur_ = agg.payload_sum.mu_second_moment;
  n_sites_ = agg.n_sites;
  if (options_.record_trace) {
    result_.loglik_trace.push_back(loglik_cur_);
    result_.beta_trace.push_back(beta_cur_);
  }
}

void GlmmFitState::absorb(const RoundAggregate& agg) {
  if (done_) throw ProtocolError("fit '" + result_.snp_id + "': round delivered after finish");
  if (!agg.payload_sum.gradient.allFinite() || !agg.payload_sum.hessian.allFinite() ||
      !std::isfinite(agg.payload_sum.laplace_loglik)) {
    finish(FitStatus::kDiverged, false);
    return;
  }
  rounds_ += 1;

  bool accepted = false;
  double step_size = 0.0;
  if (!have_accepted_) {
    accept_round(agg);
    have_accepted_ = true;
    accepted = true;
  } else {
    const double slack = 1e-9 * (1.0 + std::abs(loglik_cur_));
    const bool uphill = agg.payload_sum.laplace_loglik >= loglik_cur_ - slack;
    if (!uphill && halvings_ >= kMaxStepHalvings && sigma2_try_ != sigma2_cur_) {
      // Halving walked beta back to beta_cur yet the likelihood stayed low, so
      // the variance move is what lost ground, not the Newton step. Retry the
      // line search at the accepted sigma2 and stop moving it afterwards.
      sigma2_frozen_ = true;
      sigma2_try_ = sigma2_cur_;
      direction_ = direction_full_;
      beta_try_ = beta_cur_ + direction_;
      halvings_ = 0;
      if (rounds_ >= options_.max_outer_iterations) finish(FitStatus::kMaxIterations, false);
      return;
    }
    if (uphill || halvings_ >= kMaxStepHalvings) {
      if (!uphill) result_.ascent_violation = true;
      step_size = (beta_try_ - beta_cur_).lpNorm<Eigen::Infinity>();
      accept_round(agg);
      accepted = true;
      trying_ = false;
      if (step_size < options_.tol && agg.all_mu_converged) {
        finish(FitStatus::kOk, true);
        return;
      }
      if (beta_cur_.lpNorm<Eigen::Infinity>() > kBetaDivergenceLimit) {
        finish(FitStatus::kDiverged, false);
        return;
      }
    } else {
      halvings_ += 1;
      direction_ *= 0.5;
      beta_try_ = beta_cur_ + direction_;
    }
  }

  if (rounds_ >= options_.max_outer_iterations) {
    finish(FitStatus::kMaxIterations, false);
    return;
  }
  if (!accepted) return;  // keep trying the halved step

  // Line up the next trial: variance update then a Newton direction.
  if (!options_.sigma2_update_enabled) {
    sigma2_try_ = options_.sigma2_init;
  } else if (!sigma2_frozen_) {
    sigma2_try_ = update_sigma2_from_moment_sum(moment_sum_cur_, n_sites_);
  } else {
    sigma2_try_ = sigma2_cur_;
  }
  Eigen::VectorXd beta_new;
  try {
    beta_new = newton_step(beta_cur_, grad_cur_, hess_cur_);
  } catch (const SingularHessianError&) {
    finish(FitStatus::kSingularHessian, false);
    return;
  }
  direction_ = beta_new - beta_cur_;
  direction_full_ = direction_;
  beta_try_ = beta_new;
  halvings_ = 0;
  trying_ = true;
}

LocalStats evaluate_round(const SiteData& site, const Eigen::VectorXd& beta, double sigma2,
                          double& mu_state, double mu_tol) {
  const RandomEffectMode mode = fit_site_random_effect(site, beta, sigma2, mu_state);
  LocalStats stats = site_local_stats(site, beta, sigma2, mode);
  stats.mu_converged = std::abs(mode.mu_hat - mu_state) < mu_tol;
  mu_state = mode.mu_hat;
  return stats;
}

PooledEvaluator::PooledEvaluator(std::span<const SiteData> sites, double mu_tol)
    : sites_(sites), mu_state_(sites.size(), 0.0), mu_tol_(mu_tol) {}

std::vector<LocalStats> PooledEvaluator::round(const EvalRequest& req) {
  std::vector<LocalStats> out;
  out.reserve(sites_.size());
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    out.push_back(evaluate_round(sites_[i], req.beta, req.sigma2, mu_state_[i], mu_tol_));
  }
  return out;
}

FitResult fit_pooled(std::span<const SiteData> sites, const FitOptions& options) {
  if (sites.empty()) throw ParamError("fit_pooled: no sites");
  const Eigen::Index width = sites.front().design.cols();
  for (const SiteData& s : sites) {
    validate_site_data(s);
    if (s.snp_id != sites.front().snp_id) {
      throw ParamError("fit_pooled: sites disagree on snp id ('" + sites.front().snp_id +
                       "' vs '" + s.snp_id + "')");
    }
    if (s.design.cols() != width) {
      throw ParamError("fit_pooled: sites disagree on design width for '" + s.snp_id + "'");
    }
  }
  GlmmFitState fit(sites.front().snp_id, static_cast<int>(width), options);
  PooledEvaluator evaluator(sites, options.tol);
  while (auto req = fit.next_request()) {
    fit.absorb(aggregate(evaluator.round(*req)));
  }
  return fit.result();
}

}  // namespace fedglmm::glmm
