#pragma once

// Per-SNP logistic random-intercept mathematics: the Laplace-approximated
// site likelihood, profile gradients and Hessians, the coordinator-side
// Newton/variance updates, Wald inference, and the outer-loop state machine
// shared by the pooled oracle and the federation.
//
// Everything here is a pure function of its inputs; fitting disjoint SNPs
// from many threads is safe.

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedglmm/types.hpp"

namespace fedglmm::glmm {

inline constexpr double kSigma2Floor = 1e-6;
inline constexpr double kBetaDivergenceLimit = 50.0;
inline constexpr int kMaxInnerIterations = 100;
inline constexpr int kMaxStepHalvings = 10;

// One site's per-SNP design and phenotype. Column 0 of `design` is the
// genotype dosage; the remaining columns are covariates.
struct SiteData {
  std::string snp_id;
  Eigen::MatrixXd design;     // n_i x (p+1)
  Eigen::VectorXd phenotype;  // n_i entries in {0,1}

  Eigen::Index n() const { return design.rows(); }
  Eigen::Index width() const { return design.cols(); }
};

// Throws ParamError when the phenotype is not 0/1 or the design is
// non-finite or empty.
void validate_site_data(const SiteData& site);

// Builds one variant's modeling inputs from a loaded dataset: the genotype
// dosage column first, then the dataset's covariates.
SiteData make_site_data(const SiteDataset& ds, Eigen::Index variant_index);

// The real-valued, additively aggregated portion of a site's per-round
// message. Masking adds noise to exactly these fields and nothing else.
struct StatsPayload {
  Eigen::VectorXd gradient;        // p+1
  Eigen::MatrixXd hessian;         // (p+1) x (p+1), symmetric
  double mu_hat = 0.0;             // conditional mode of the site intercept
  double mu_curvature = 0.0;       // -d2l/dmu2 at the mode, > 0
  double mu_second_moment = 0.0;   // mu_hat^2 + 1/mu_curvature
  double laplace_loglik = 0.0;
};

StatsPayload payload_zero_like(const StatsPayload& shape);
void payload_add(StatsPayload& acc, const StatsPayload& term);
void payload_subtract(StatsPayload& acc, const StatsPayload& term);

// One site's complete per-round message.
struct LocalStats {
  std::string snp_id;
  std::string site_id;
  long n_i = 0;
  StatsPayload payload;
  Eigen::VectorXd local_se;   // diagnostic; empty when the site Hessian is
                              // singular or the run is masked
  bool hessian_singular = false;
  bool mu_converged = false;  // |mu change| below tol at this refresh
};

// Conditional log-likelihood of one site at (beta, mu):
//   sum_j [ y_j eta_j - log(1 + exp(eta_j)) ] + log phi(mu; 0, sigma2).
double site_conditional_loglik(const SiteData& site, const Eigen::VectorXd& beta,
                               double mu, double sigma2);

struct RandomEffectMode {
  double mu_hat = 0.0;
  double mu_curvature = 0.0;  // always > 0
  int iterations = 0;
};

// Maximizes the conditional log-likelihood over mu by 1-D Newton. The
// problem is strictly concave, so the mode is unique; convergence is
// |delta mu| < 1e-10 within 100 iterations.
RandomEffectMode fit_site_random_effect(const SiteData& site, const Eigen::VectorXd& beta,
                                        double sigma2, double mu0);

// Profile gradient, Schur-complement profile Hessian, local SEs, and the
// Laplace log-likelihood at the converged mode.
LocalStats site_local_stats(const SiteData& site, const Eigen::VectorXd& beta,
                            double sigma2, const RandomEffectMode& mode);

// beta_new = beta_prev - H^-1 g via a symmetric solve of -H; throws
// SingularHessianError with condition diagnostics when -H is not usably
// positive definite.
Eigen::VectorXd newton_step(const Eigen::VectorXd& beta_prev,
                            const Eigen::VectorXd& grad_global,
                            const Eigen::MatrixXd& hess_global);

// EM-style variance update from the Laplace-Gaussian posterior second
// moments, floored at kSigma2Floor.
double update_sigma2(std::span<const double> mu_hats, std::span<const double> mu_curvatures);
double update_sigma2_from_moment_sum(double second_moment_sum, long n_sites);

struct WaldStats {
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p;
};

// SEs from the inverse observed information, z = beta/se, two-sided normal
// p-values. Throws SingularHessianError when -H is not positive definite.
WaldStats wald_inference(const Eigen::VectorXd& beta, const Eigen::MatrixXd& hess_global);

// ---------------------------------------------------------------------------
// Outer-loop state machine
// ---------------------------------------------------------------------------

struct FitOptions {
  double tol = 1e-6;
  int max_outer_iterations = 50;
  double sigma2_init = 0.1;
  bool sigma2_update_enabled = true;  // false pins sigma2 at sigma2_init
  bool record_trace = true;
};

// What the sites must evaluate next: refresh the random-effect mode at
// (beta, sigma2) and return local stats.
struct EvalRequest {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  int round = 0;  // 1-based outer iteration index
};

// Site-order sums of one round of local stats plus the flags the driver
// needs. In masked runs the payload arrives via the compensator; the flags
// are never masked.
struct RoundAggregate {
  StatsPayload payload_sum;
  long n_total = 0;
  long n_sites = 0;
  bool all_mu_converged = false;
  bool any_singular = false;
};

// Plain left-to-right summation in site order; bit-reproducible for a fixed
// ordering. Throws ProtocolError on snp or dimension mismatch.
RoundAggregate aggregate(std::span<const LocalStats> stats);

enum class FitStatus { kOk, kMaxIterations, kDiverged, kSingularHessian };

struct FitResult {
  std::string snp_id;
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  int n_iterations = 0;  // evaluation rounds consumed (one message pair each)
  bool converged = false;
  FitStatus status = FitStatus::kOk;
  bool inference_ok = false;
  WaldStats wald;
  std::vector<double> loglik_trace;               // accepted iterates
  std::vector<Eigen::VectorXd> beta_trace;        // accepted iterates
  bool ascent_violation = false;                  // halvings exhausted downhill
};

// Drives one SNP's fit: emits evaluation requests, absorbs round
// aggregates, applies step-halving, the variance update, and the joint
// (delta beta, delta mu) convergence test, and finishes with Wald
// inference. The same machine runs pooled and federated, so their
// trajectories are identical by construction.
class GlmmFitState {
 public:
  GlmmFitState(std::string snp_id, int n_coefficients, const FitOptions& options);

  // nullopt once the fit has finished (converged, exhausted, or failed).
  std::optional<EvalRequest> next_request() const;
  void absorb(const RoundAggregate& agg);
  bool done() const { return done_; }
  const FitResult& result() const { return result_; }
  const std::string& snp_id() const { return result_.snp_id; }

 private:
  void finish(FitStatus status, bool converged);
  void accept_round(const RoundAggregate& agg);

  FitOptions options_;
  FitResult result_;
  bool done_ = false;
  int rounds_ = 0;

  // Accepted state.
  Eigen::VectorXd beta_cur_;
  double sigma2_cur_;
  double loglik_cur_ = 0.0;
  Eigen::VectorXd grad_cur_;
  Eigen::MatrixXd hess_cur_;
  double moment_sum_cur_ = 0.0;
  long n_sites_ = 0;
  bool have_accepted_ = false;

  // Pending trial state.
  Eigen::VectorXd beta_try_;
  double sigma2_try_;
  Eigen::VectorXd direction_;
  Eigen::VectorXd direction_full_;
  int halvings_ = 0;
  bool trying_ = false;
  // Set once a variance move has been rejected; the EM fixed point sits a
  // Laplace-approximation-error away from the likelihood optimum, so past
  // that point further sigma2 moves can only lower the objective.
  bool sigma2_frozen_ = false;
};

// One site's work for one round: refresh the random-effect mode at
// (beta, sigma2) warm-started from mu_state, build local stats, set the
// mu-movement flag against mu_tol, and advance mu_state. The pooled oracle
// and the federation site worker both run exactly this.
LocalStats evaluate_round(const SiteData& site, const Eigen::VectorXd& beta, double sigma2,
                          double& mu_state, double mu_tol);

// Evaluates one round for a list of in-process sites, warm-starting each
// site's random effect from the previous round. Used by the pooled oracle
// and by tests.
class PooledEvaluator {
 public:
  explicit PooledEvaluator(std::span<const SiteData> sites, double mu_tol);
  std::vector<LocalStats> round(const EvalRequest& req);

 private:
  std::span<const SiteData> sites_;
  std::vector<double> mu_state_;
  double mu_tol_;
};

// Centralized oracle: the identical inner-mu / outer-Newton / variance loop
// over a site list in one process.
FitResult fit_pooled(std::span<const SiteData> sites, const FitOptions& options = {});

}  // namespace fedglmm::glmm
