#pragma once

// Ordinary least-squares association scan for quantitative traits:
// per SNP, y ~ intercept + genotype + covariates, t-test on the genotype
// coefficient. The base design is factorized once and both y and each
// genotype column are residualized against it.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fedglmm/types.hpp"

namespace fedglmm::scan {

struct LinearResult {
  std::string snp_id;
  bool skipped = false;
  std::string note;  // reason code when skipped
  double beta = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p_value = 0.0;
};

// Runs the scan over every variant. Covariates may have zero rows.
// Requires n > covariates + 2 so the t-test has positive degrees of
// freedom; genotypes must be imputed (no NaN).
std::vector<LinearResult> linear_assoc_scan(const GenotypeMatrix& genotypes,
                                            const Eigen::VectorXd& phenotype,
                                            const CovariateMatrix& covariates);

}  // namespace fedglmm::scan
