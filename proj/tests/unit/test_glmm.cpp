#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "fedglmm/errors.hpp"
#include "fedglmm/glmm.hpp"
#include "fedglmm/numeric.hpp"

using namespace fedglmm;

namespace {

glmm::SiteData zero_design_site(std::vector<double> y) {
  glmm::SiteData site;
  site.snp_id = "s";
  site.design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), 1);
  site.phenotype = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return site;
}

glmm::SiteData random_site(std::mt19937_64& rng, int n, int width, const char* snp = "s") {
  std::normal_distribution<double> gauss;
  std::bernoulli_distribution coin(0.5);
  glmm::SiteData site;
  site.snp_id = snp;
  site.design.resize(n, width);
  site.phenotype.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < width; ++j) site.design(i, j) = gauss(rng);
    site.phenotype(i) = coin(rng) ? 1.0 : 0.0;
  }
  return site;
}

// Profiled conditional log-likelihood f(beta) = max_mu l(beta, mu).
double profiled_loglik(const glmm::SiteData& site, const Eigen::VectorXd& beta, double sigma2,
                       double mu0) {
  const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, sigma2, mu0);
  return glmm::site_conditional_loglik(site, beta, mode.mu_hat, sigma2);
}

// Plain logistic IRLS on pooled rows, written against the textbook normal
// equations so it shares no code with the implementation under test.
struct IrlsFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
};

IrlsFit irls_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd p(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    const Eigen::VectorXd score = x.transpose() * (y - p);
    const Eigen::VectorXd delta = info.fullPivLu().solve(score);
    beta += delta;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-12) break;
  }
  const Eigen::VectorXd eta = x * beta;
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta(i)));
    w(i) = p * (1.0 - p);
  }
  const Eigen::MatrixXd cov = (x.transpose() * w.asDiagonal() * x).inverse();
  IrlsFit fit;
  fit.beta = beta;
  fit.se = cov.diagonal().cwiseSqrt();
  return fit;
}

// Adaptive Simpson quadrature of exp(l(beta, mu) - shift) d mu.
double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm,
               double fb, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) +
         simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1);
}

double quadrature_marginal_loglik(const glmm::SiteData& site, const Eigen::VectorXd& beta,
                                  double sigma2) {
  const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, sigma2, 0.0);
  const double shift = glmm::site_conditional_loglik(site, beta, mode.mu_hat, sigma2);
  const auto f = [&](double mu) {
    return std::exp(glmm::site_conditional_loglik(site, beta, mu, sigma2) - shift);
  };
  const double half_width = 12.0 / std::sqrt(mode.mu_curvature);
  const double a = mode.mu_hat - half_width, b = mode.mu_hat + half_width;
  const double m = 0.5 * (a + b);
  const double integral = simpson(f, a, b, f(a), f(m), f(b), 1e-12, 40);
  return shift + std::log(integral);
}

}  // namespace

TEST_CASE("site data validation") {
  glmm::SiteData good = zero_design_site({0, 1});
  CHECK_NOTHROW(glmm::validate_site_data(good));

  glmm::SiteData not_binary = good;
  not_binary.phenotype(0) = 0.5;
  CHECK_THROWS_AS(glmm::validate_site_data(not_binary), ParamError);

  glmm::SiteData empty;
  empty.snp_id = "s";
  empty.design.resize(0, 1);
  empty.phenotype.resize(0);
  CHECK_THROWS_AS(glmm::validate_site_data(empty), ParamError);

  glmm::SiteData inf = good;
  inf.design(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(glmm::validate_site_data(inf), ParamError);
}

TEST_CASE("make_site_data puts the genotype first then the covariates") {
  SiteDataset ds;
  ds.site_id = "siteA";
  ds.genotypes.variant_ids = {"v1", "v2"};
  ds.genotypes.sample_ids = {"a", "b"};
  ds.genotypes.dosages.resize(2, 2);
  ds.genotypes.dosages << 0, 1,
                          2, 2;
  ds.covariates.sample_ids = {"a", "b"};
  ds.covariates.values.resize(1, 2);
  ds.covariates.values << 0.5, -0.5;
  ds.phenotype.resize(2);
  ds.phenotype << 0, 1;
  const glmm::SiteData site = glmm::make_site_data(ds, 1);
  CHECK(site.snp_id == "v2");
  REQUIRE(site.design.rows() == 2);
  REQUIRE(site.design.cols() == 2);
  CHECK(site.design(0, 0) == 2.0);  // v2 dosage of sample a
  CHECK(site.design(0, 1) == 0.5);
  CHECK(site.phenotype(1) == 1.0);
}

TEST_CASE("conditional loglik closed forms") {
  const glmm::SiteData site = zero_design_site({0, 1});
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  const double got = glmm::site_conditional_loglik(site, beta, 0.0, 1.0);
  // 2 ln(1/2) - (1/2) ln(2 pi)
  CHECK(std::fabs(got - (-2.3052328943245634)) < 1e-12);
  // The mu penalty alone: log phi(0;0,1).
  const double data_only = 2.0 * std::log(0.5);
  CHECK(std::fabs((got - data_only) - (-0.9189385332046727)) < 1e-12);
}

TEST_CASE("conditional loglik matches a naive summation oracle") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 20; ++rep) {
    const glmm::SiteData site = random_site(rng, 6, 2);
    Eigen::VectorXd beta(2);
    beta << gauss(rng) * 0.5, gauss(rng) * 0.5;
    const double mu = gauss(rng) * 0.4;
    const double sigma2 = 0.3 + 0.5 * std::fabs(gauss(rng));
    double naive = 0.0;
    for (Eigen::Index j = 0; j < site.n(); ++j) {
      const double eta = site.design.row(j).dot(beta) + mu;
      naive += site.phenotype(j) * eta - std::log1p(std::exp(eta));
    }
    naive += -0.5 * std::log(2.0 * M_PI * sigma2) - mu * mu / (2.0 * sigma2);
    CHECK(std::fabs(glmm::site_conditional_loglik(site, beta, mu, sigma2) - naive) < 1e-12);
  }
}

TEST_CASE("conditional loglik is overflow safe at extreme eta") {
  glmm::SiteData site = zero_design_site({1});
  site.design(0, 0) = 1.0;
  Eigen::VectorXd beta(1);
  beta << 690.0;
  CHECK(std::isfinite(glmm::site_conditional_loglik(site, beta, 0.0, 1.0)));
  beta << -690.0;
  CHECK(std::isfinite(glmm::site_conditional_loglik(site, beta, 0.0, 1.0)));
}

TEST_CASE("random effect mode: symmetric case gives zero") {
  const glmm::SiteData site = zero_design_site({1, 0});
  const glmm::RandomEffectMode mode =
      glmm::fit_site_random_effect(site, Eigen::VectorXd::Zero(1), 1.0, 0.3);
  CHECK(std::fabs(mode.mu_hat) < 1e-10);
  CHECK(mode.mu_curvature > 0.0);
  CHECK(mode.iterations <= 100);
}

TEST_CASE("random effect mode matches a bisection oracle") {
  // y=(1,1,0), zero design, beta=0, sigma2=1: mu solves 2 - 3 sigmoid(mu) - mu = 0.
  const glmm::SiteData site = zero_design_site({1, 1, 0});
  const auto score = [](double mu) { return 2.0 - 3.0 / (1.0 + std::exp(-mu)) - mu; };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (score(mid) > 0 ? lo : hi) = mid;
  }
  const double oracle = 0.5 * (lo + hi);
  CHECK(std::fabs(oracle - 0.2865477401510012) < 1e-12);
  const glmm::RandomEffectMode mode =
      glmm::fit_site_random_effect(site, Eigen::VectorXd::Zero(1), 1.0, 0.0);
  CHECK(std::fabs(mode.mu_hat - oracle) < 1e-10);
  // Curvature at the mode: sum w + 1/sigma2.
  const double p = 1.0 / (1.0 + std::exp(-oracle));
  CHECK(std::fabs(mode.mu_curvature - (3.0 * p * (1.0 - p) + 1.0)) < 1e-9);
}

TEST_CASE("random effect shrinks monotonically as sigma2 drops") {
  const glmm::SiteData site = zero_design_site({1, 1, 1, 0});
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma2 : {1.0, 0.5, 0.1, 0.01, 1e-3, 1e-6}) {
    const double mu =
        glmm::fit_site_random_effect(site, Eigen::VectorXd::Zero(1), sigma2, 0.0).mu_hat;
    CHECK(mu > 0.0);
    CHECK(mu < prev);
    prev = mu;
  }
  CHECK(prev < 1e-5);  // penalty dominates at the floor
}

TEST_CASE("inner problem is concave and converges on random inputs") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const glmm::SiteData site = random_site(rng, 3 + static_cast<int>(rng() % 10), 2);
    Eigen::VectorXd beta = Eigen::VectorXd::Random(2);
    const double sigma2 = 0.05 + 0.95 * (static_cast<double>(rng() % 1000) / 1000.0);
    const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, sigma2, 0.0);
    CHECK(mode.mu_curvature > 0.0);
    CHECK(mode.iterations <= 100);
    CHECK(std::isfinite(mode.mu_hat));
  }
}

TEST_CASE("profile gradient and Hessian closed-form example") {
  glmm::SiteData site = zero_design_site({0, 1});
  site.design(0, 0) = 0.0;
  site.design(1, 0) = 2.0;
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  const glmm::RandomEffectMode mode{0.0, 1.5, 0};
  const glmm::LocalStats stats = glmm::site_local_stats(site, beta, 1.0, mode);
  CHECK(std::fabs(stats.payload.gradient(0) - 1.0) < 1e-12);
  CHECK(std::fabs(stats.payload.hessian(0, 0) - (-5.0 / 6.0)) < 1e-12);
  CHECK(stats.n_i == 2);
  CHECK(!stats.hessian_singular);
  CHECK(stats.local_se.size() == 1);
}

TEST_CASE("zero-variance genotype flags a singular profile Hessian") {
  glmm::SiteData site = zero_design_site({0, 1, 1});
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, 1.0, 0.0);
  const glmm::LocalStats stats = glmm::site_local_stats(site, beta, 1.0, mode);
  CHECK(stats.hessian_singular);
  CHECK(stats.local_se.size() == 0);
}

TEST_CASE("laplace loglik closed form and quadrature oracle") {
  glmm::SiteData site = zero_design_site({0, 1});
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  const glmm::RandomEffectMode mode{0.0, 1.5, 0};
  const glmm::LocalStats stats = glmm::site_local_stats(site, beta, 1.0, mode);
  // l(0,0) + (1/2) ln(2 pi) - (1/2) ln(3/2)
  CHECK(std::fabs(stats.payload.laplace_loglik - (-1.5890269151739728)) < 1e-12);
  const double quad = quadrature_marginal_loglik(site, beta, 1.0);
  CHECK(std::fabs(stats.payload.laplace_loglik - quad) / std::fabs(quad) < 0.02);
}

TEST_CASE("laplace approximation tracks quadrature on random small sites") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 15; ++rep) {
    const glmm::SiteData site = random_site(rng, 4 + static_cast<int>(rng() % 12), 2);
    const Eigen::VectorXd beta = 0.5 * Eigen::VectorXd::Random(2);
    const double sigma2 = 0.1 + 0.8 * (static_cast<double>(rng() % 1000) / 1000.0);
    const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, sigma2, 0.0);
    const glmm::LocalStats stats = glmm::site_local_stats(site, beta, sigma2, mode);
    const double quad = quadrature_marginal_loglik(site, beta, sigma2);
    CHECK(std::fabs(stats.payload.laplace_loglik - quad) / std::fabs(quad) < 0.02);
  }
}

TEST_CASE("profile gradient and Hessian match finite differences") {
  std::mt19937_64 rng(31415);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 25; ++rep) {
    const int width = 1 + static_cast<int>(rng() % 3);
    const glmm::SiteData site = random_site(rng, 4 + static_cast<int>(rng() % 9), width);
    Eigen::VectorXd beta(width);
    for (int j = 0; j < width; ++j) beta(j) = 0.5 * gauss(rng);
    const double sigma2 = 0.05 + 0.9 * (static_cast<double>(rng() % 1000) / 1000.0);

    const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, sigma2, 0.0);
    const glmm::LocalStats stats = glmm::site_local_stats(site, beta, sigma2, mode);

    const double hg = 1e-5;
    for (int j = 0; j < width; ++j) {
      Eigen::VectorXd bp = beta, bm = beta;
      bp(j) += hg;
      bm(j) -= hg;
      const double fd = (profiled_loglik(site, bp, sigma2, mode.mu_hat) -
                         profiled_loglik(site, bm, sigma2, mode.mu_hat)) /
                        (2 * hg);
      const double denom = std::max(std::fabs(stats.payload.gradient(j)), 1e-2);
      CHECK(std::fabs(stats.payload.gradient(j) - fd) / denom < 1e-5);
    }

    const double hh = 5e-4;
    for (int j = 0; j < width; ++j) {
      for (int k = j; k < width; ++k) {
        Eigen::VectorXd bpp = beta, bpm = beta, bmp = beta, bmm = beta;
        bpp(j) += hh; bpp(k) += hh;
        bpm(j) += hh; bpm(k) -= hh;
        bmp(j) -= hh; bmp(k) += hh;
        bmm(j) -= hh; bmm(k) -= hh;
        const double fd = (profiled_loglik(site, bpp, sigma2, mode.mu_hat) -
                           profiled_loglik(site, bpm, sigma2, mode.mu_hat) -
                           profiled_loglik(site, bmp, sigma2, mode.mu_hat) +
                           profiled_loglik(site, bmm, sigma2, mode.mu_hat)) /
                          (4 * hh * hh);
        const double denom = std::max(std::fabs(stats.payload.hessian(j, k)), 1e-2);
        CHECK(std::fabs(stats.payload.hessian(j, k) - fd) / denom < 1e-4);
        CHECK(std::fabs(stats.payload.hessian(j, k) - stats.payload.hessian(k, j)) < 1e-10);
      }
    }
  }
}

TEST_CASE("newton step examples and dense-solve oracle") {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd grad(2);
  grad << 1.0, 0.0;
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(2, 2);
  hess(0, 0) = -2.0;
  hess(1, 1) = -4.0;
  const Eigen::VectorXd stepped = glmm::newton_step(beta, grad, hess);
  CHECK(std::fabs(stepped(0) - 0.5) < 1e-15);
  CHECK(stepped(1) == 0.0);

  const Eigen::VectorXd same = glmm::newton_step(stepped, Eigen::VectorXd::Zero(2), hess);
  CHECK(same == stepped);

  std::mt19937_64 rng(55);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd m(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) m(i, j) = gauss(rng);
    const Eigen::MatrixXd spd = m * m.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd g(4), b0(4);
    for (int i = 0; i < 4; ++i) {
      g(i) = gauss(rng);
      b0(i) = gauss(rng);
    }
    const Eigen::VectorXd got = glmm::newton_step(b0, g, -spd);
    const Eigen::VectorXd oracle = b0 + spd.fullPivLu().solve(g);
    CHECK((got - oracle).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("newton step rejects non-negative-definite Hessians") {
  const Eigen::VectorXd beta = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd grad = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(glmm::newton_step(beta, grad, Eigen::MatrixXd::Identity(2, 2)),
                  SingularHessianError);
  CHECK_THROWS_AS(glmm::newton_step(beta, grad, Eigen::MatrixXd::Zero(2, 2)),
                  SingularHessianError);
}

TEST_CASE("sigma2 update arithmetic") {
  const std::vector<double> mu{0.3, -0.3, 0.0};
  const std::vector<double> curv{10.0, 10.0, 10.0};
  CHECK(std::fabs(glmm::update_sigma2(mu, curv) - 0.16) < 1e-15);

  const std::vector<double> mu0{0.0, 0.0};
  const std::vector<double> huge{1e12, 1e12};
  CHECK(glmm::update_sigma2(mu0, huge) == glmm::kSigma2Floor);

  const std::vector<double> one_mu{0.5};
  const std::vector<double> one_c{4.0};
  CHECK(std::fabs(glmm::update_sigma2(one_mu, one_c) - 0.5) < 1e-15);

  // The moment-sum form is the same update.
  const double moment_sum = 0.09 + 0.1 + 0.09 + 0.1 + 0.0 + 0.1;
  CHECK(std::fabs(glmm::update_sigma2_from_moment_sum(moment_sum, 3) - 0.16) < 1e-15);
}

TEST_CASE("wald inference examples") {
  Eigen::VectorXd beta(1);
  beta << 0.5;
  Eigen::MatrixXd hess(1, 1);
  hess << -16.0;  // (-H)^-1 = 0.0625
  const glmm::WaldStats w = glmm::wald_inference(beta, hess);
  CHECK(std::fabs(w.se(0) - 0.25) < 1e-15);
  CHECK(std::fabs(w.z(0) - 2.0) < 1e-14);
  CHECK(std::fabs(w.p(0) - 0.04550026389635841) < 1e-15);

  beta << 0.0;
  CHECK(glmm::wald_inference(beta, hess).p(0) == 1.0);

  beta << 12.0;
  hess << -1.0;
  const glmm::WaldStats tail = glmm::wald_inference(beta, hess);
  CHECK(std::fabs(tail.p(0) - 3.552964224155358e-33) / 3.552964224155358e-33 < 1e-10);

  CHECK_THROWS_AS(glmm::wald_inference(beta, Eigen::MatrixXd::Identity(1, 1)),
                  SingularHessianError);
}

TEST_CASE("aggregation is exact site-order summation") {
  std::mt19937_64 rng(99);
  std::vector<glmm::LocalStats> stats;
  for (int s = 0; s < 3; ++s) {
    const glmm::SiteData site = random_site(rng, 8, 2);
    const Eigen::VectorXd beta = 0.3 * Eigen::VectorXd::Random(2);
    const glmm::RandomEffectMode mode = glmm::fit_site_random_effect(site, beta, 0.5, 0.0);
    glmm::LocalStats st = glmm::site_local_stats(site, beta, 0.5, mode);
    st.site_id = "site" + std::to_string(s);
    stats.push_back(st);
  }

  const glmm::RoundAggregate agg = glmm::aggregate(stats);
  Eigen::VectorXd grad = stats[0].payload.gradient;
  Eigen::MatrixXd hess = stats[0].payload.hessian;
  double loglik = stats[0].payload.laplace_loglik;
  double moment = stats[0].payload.mu_second_moment;
  for (int s = 1; s < 3; ++s) {
    grad += stats[s].payload.gradient;
    hess += stats[s].payload.hessian;
    loglik += stats[s].payload.laplace_loglik;
    moment += stats[s].payload.mu_second_moment;
  }
  CHECK(agg.payload_sum.gradient == grad);
  CHECK(agg.payload_sum.hessian == hess);
  CHECK(agg.payload_sum.laplace_loglik == loglik);
  CHECK(agg.payload_sum.mu_second_moment == moment);
  CHECK(agg.n_total == 24);
  CHECK(agg.n_sites == 3);

  // Two identical stats double every field.
  const glmm::RoundAggregate twice = glmm::aggregate(std::vector<glmm::LocalStats>{
      stats[0], stats[0]});
  CHECK(twice.payload_sum.gradient == 2.0 * stats[0].payload.gradient);
  CHECK(twice.payload_sum.hessian == 2.0 * stats[0].payload.hessian);
  CHECK(twice.payload_sum.laplace_loglik == 2.0 * stats[0].payload.laplace_loglik);

  // Single-site aggregation is the identity.
  const glmm::RoundAggregate one = glmm::aggregate(std::vector<glmm::LocalStats>{stats[0]});
  CHECK(one.payload_sum.gradient == stats[0].payload.gradient);

  // Mismatches are protocol errors.
  std::vector<glmm::LocalStats> bad = stats;
  bad[1].snp_id = "other";
  CHECK_THROWS_AS(glmm::aggregate(bad), ProtocolError);
  bad = stats;
  bad[2].payload.gradient = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(glmm::aggregate(bad), ProtocolError);
}

TEST_CASE("pinned-floor fit collapses to the IRLS oracle") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  glmm::SiteData site;
  site.snp_id = "s";
  const int n = 120;
  // Intercept column included: the fitted residuals then sum to zero, which
  // drives the random-intercept mode to zero and makes the reduction exact.
  site.design.resize(n, 3);
  site.phenotype.resize(n);
  for (int i = 0; i < n; ++i) {
    site.design(i, 0) = static_cast<double>(rng() % 3);
    site.design(i, 1) = gauss(rng);
    site.design(i, 2) = 1.0;
    const double eta = 0.4 * site.design(i, 0) - 0.3 * site.design(i, 1);
    site.phenotype(i) =
        (static_cast<double>(rng() % 100000) / 100000.0 < 1.0 / (1.0 + std::exp(-eta))) ? 1 : 0;
  }
  glmm::FitOptions opt;
  opt.sigma2_init = glmm::kSigma2Floor;
  opt.sigma2_update_enabled = false;
  const glmm::FitResult fit = glmm::fit_pooled(std::vector<glmm::SiteData>{site}, opt);
  REQUIRE(fit.converged);
  const IrlsFit oracle = irls_logistic(site.design, site.phenotype);
  CHECK((fit.beta - oracle.beta).lpNorm<Eigen::Infinity>() < 1e-6);
  // The variance-floor information correction moves the standard errors at
  // order sigma2, so they track the oracle a decade looser than beta does.
  REQUIRE(fit.inference_ok);
  CHECK((fit.wald.se - oracle.se).lpNorm<Eigen::Infinity>() < 1e-5);
}

TEST_CASE("perfect separation trips the divergence guard") {
  glmm::SiteData site;
  site.snp_id = "s";
  site.design.resize(6, 1);
  site.phenotype.resize(6);
  for (int i = 0; i < 6; ++i) {
    const bool is_case = i < 3;
    site.design(i, 0) = is_case ? 2.0 : 0.0;
    site.phenotype(i) = is_case ? 1.0 : 0.0;
  }
  const glmm::FitResult fit = glmm::fit_pooled(std::vector<glmm::SiteData>{site}, {});
  // The guard has two arms: beta walking past the bound, or the curvature
  // collapsing on the way there. Either way the fit must refuse to converge.
  CHECK(!fit.converged);
  const bool guarded = fit.status == glmm::FitStatus::kDiverged ||
                       fit.status == glmm::FitStatus::kSingularHessian;
  CHECK(guarded);
  CHECK(!fit.inference_ok);
}

TEST_CASE("fit input validation") {
  CHECK_THROWS_AS(glmm::fit_pooled(std::vector<glmm::SiteData>{}, {}), ParamError);
  std::mt19937_64 rng(3);
  std::vector<glmm::SiteData> sites;
  sites.push_back(random_site(rng, 6, 1, "a"));
  sites.push_back(random_site(rng, 6, 1, "b"));
  CHECK_THROWS_AS(glmm::fit_pooled(sites, {}), ParamError);

  glmm::FitOptions bad;
  bad.sigma2_init = 0.0;
  CHECK_THROWS_AS(glmm::GlmmFitState("s", 1, bad), ParamError);
  CHECK_THROWS_AS(glmm::GlmmFitState("s", 0, {}), ParamError);
}

TEST_CASE("accepted likelihood trace is non-decreasing with step halving") {
  std::mt19937_64 rng(1234);
  int converged_count = 0;
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<glmm::SiteData> sites;
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < k; ++s) sites.push_back(random_site(rng, 20 + (int)(rng() % 30), 2));
    glmm::FitOptions opt;
    opt.record_trace = true;
    const glmm::FitResult fit = glmm::fit_pooled(sites, opt);
    if (fit.status == glmm::FitStatus::kDiverged ||
        fit.status == glmm::FitStatus::kSingularHessian) {
      continue;
    }
    CHECK(!fit.ascent_violation);
    for (size_t i = 1; i < fit.loglik_trace.size(); ++i) {
      const double slack = 1e-9 * (1.0 + std::fabs(fit.loglik_trace[i - 1]));
      CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - slack);
    }
    CHECK(fit.sigma2 >= glmm::kSigma2Floor);
    if (fit.converged) ++converged_count;
  }
  CHECK(converged_count > 0);
}

TEST_CASE("converged fits carry valid Wald statistics") {
  std::mt19937_64 rng(4321);
  std::normal_distribution<double> gauss;
  std::vector<glmm::SiteData> sites;
  const double shifts[3] = {-0.8, 0.0, 0.8};
  for (int s = 0; s < 3; ++s) {
    glmm::SiteData site;
    site.snp_id = "s";
    site.design.resize(60, 2);
    site.phenotype.resize(60);
    const double site_shift = shifts[s];
    for (int i = 0; i < 60; ++i) {
      site.design(i, 0) = static_cast<double>(rng() % 3);
      site.design(i, 1) = gauss(rng);
      const double eta = 0.3 * site.design(i, 0) + site_shift;
      site.phenotype(i) =
          (static_cast<double>(rng() % 100000) / 100000.0 < 1.0 / (1.0 + std::exp(-eta))) ? 1
                                                                                          : 0;
    }
    sites.push_back(site);
  }
  const glmm::FitResult fit = glmm::fit_pooled(sites, {});
  REQUIRE(fit.converged);
  REQUIRE(fit.inference_ok);
  for (Eigen::Index j = 0; j < fit.wald.p.size(); ++j) {
    CHECK(fit.wald.se(j) > 0.0);
    CHECK(fit.wald.p(j) > 0.0);
    CHECK(fit.wald.p(j) <= 1.0);
  }
  CHECK(fit.n_iterations <= 50);
}

TEST_CASE("evaluate_round is deterministic on replay") {
  std::mt19937_64 rng(808);
  const glmm::SiteData site = random_site(rng, 25, 3);
  Eigen::VectorXd beta(3);
  beta << 0.2, -0.1, 0.05;
  double mu_a = 0.0, mu_b = 0.0;
  const glmm::LocalStats a = glmm::evaluate_round(site, beta, 0.3, mu_a, 1e-6);
  const glmm::LocalStats b = glmm::evaluate_round(site, beta, 0.3, mu_b, 1e-6);
  CHECK(a.payload.gradient == b.payload.gradient);
  CHECK(a.payload.hessian == b.payload.hessian);
  CHECK(a.payload.mu_hat == b.payload.mu_hat);
  CHECK(a.payload.laplace_loglik == b.payload.laplace_loglik);
  CHECK(mu_a == mu_b);
}
