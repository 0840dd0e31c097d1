#include "fedglmm/linear_scan.hpp"

#include <cmath>
#include <limits>

#include "fedglmm/errors.hpp"
#include "fedglmm/numeric.hpp"

namespace fedglmm::scan {

std::vector<LinearResult> linear_assoc_scan(const GenotypeMatrix& genotypes,
                                            const Eigen::VectorXd& phenotype,
                                            const CovariateMatrix& covariates) {
  const Eigen::Index n = genotypes.n_samples();
  const Eigen::Index k = covariates.values.rows();
  if (phenotype.size() != n) {
    throw ParamError("phenotype has " + std::to_string(phenotype.size()) + " entries for " +
                     std::to_string(n) + " samples");
  }
  if (k > 0 && covariates.values.cols() != n) {
    throw ParamError("covariates cover " + std::to_string(covariates.values.cols()) +
                     " samples, genotypes " + std::to_string(n));
  }
  if (!phenotype.allFinite()) throw ParamError("phenotype has non-finite entries");
  if (genotypes.has_missing()) throw ParamError("genotypes must be imputed before scanning");
  const Eigen::Index df = n - k - 2;
  if (df < 1) {
    throw ParamError("need more than " + std::to_string(k + 2) + " samples for " +
                     std::to_string(k) + " covariates");
  }

  // Base design [1 | covariates]; residualizing y and g against it reduces
  // each SNP to a simple regression of the two residual vectors.
  Eigen::MatrixXd base(n, k + 1);
  base.col(0).setOnes();
  if (k > 0) base.rightCols(k) = covariates.values.transpose();
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(base);
  const Eigen::VectorXd ry = phenotype - base * qr.solve(phenotype);

  std::vector<LinearResult> results;
  results.reserve(static_cast<std::size_t>(genotypes.n_variants()));
  for (Eigen::Index v = 0; v < genotypes.n_variants(); ++v) {
    LinearResult res;
    res.snp_id = genotypes.variant_ids[static_cast<std::size_t>(v)];
    const Eigen::VectorXd g = genotypes.dosages.row(v).transpose();
    const double g_centered_ss = (g.array() - g.mean()).matrix().squaredNorm();
    if (g_centered_ss == 0.0) {
      res.skipped = true;
      res.note = "zero_variance";
      results.push_back(std::move(res));
      continue;
    }
    const Eigen::VectorXd rg = g - base * qr.solve(g);
    const double gss = rg.squaredNorm();
    if (gss <= g_centered_ss * 1e-12) {
      res.skipped = true;
      res.note = "collinear_with_covariates";
      results.push_back(std::move(res));
      continue;
    }
    res.beta = rg.dot(ry) / gss;
    const double rss = (ry - res.beta * rg).squaredNorm();
    res.se = std::sqrt(std::max(rss, 0.0) / static_cast<double>(df) / gss);
    res.t = res.se > 0.0 ? res.beta / res.se
                         : (res.beta == 0.0 ? 0.0
                                            : std::numeric_limits<double>::infinity() *
                                                  (res.beta > 0.0 ? 1.0 : -1.0));
    res.p_value = num::student_t_two_sided_p(res.t, static_cast<double>(df));
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace fedglmm::scan
