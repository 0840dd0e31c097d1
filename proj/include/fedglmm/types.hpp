#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

namespace fedglmm {

// Study genotype dosages, variants x samples. Entries are 0/1/2 at load time
// (NaN marks missing) and may become fractional after mean imputation.
struct GenotypeMatrix {
  std::vector<std::string> variant_ids;
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd dosages;

  Eigen::Index n_variants() const { return dosages.rows(); }
  Eigen::Index n_samples() const { return dosages.cols(); }
  bool has_missing() const { return dosages.hasNaN(); }
};

// Complete reference-panel dosages (no missing entries by construction).
struct ReferencePanel {
  std::vector<std::string> variant_ids;
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd dosages;

  Eigen::Index n_variants() const { return dosages.rows(); }
  Eigen::Index n_samples() const { return dosages.cols(); }
};

// Top-k principal-component loadings of a reference panel, with the
// per-variant panel means needed to center study genotypes.
struct PcLoadings {
  std::vector<std::string> variant_ids;
  Eigen::MatrixXd loadings;       // N x k, orthonormal columns
  Eigen::VectorXd eigenvalues;    // length k, non-increasing
  Eigen::VectorXd variant_means;  // length N

  Eigen::Index n_variants() const { return loadings.rows(); }
  Eigen::Index n_components() const { return loadings.cols(); }
};

// Projection scores, components x samples.
struct CovariateMatrix {
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd values;  // k x n

  Eigen::Index n_components() const { return values.rows(); }
  Eigen::Index n_samples() const { return values.cols(); }
};

// Phenotype vector keyed by sample id. Binary traits are coded 0/1.
struct PhenotypeVector {
  std::vector<std::string> sample_ids;
  Eigen::VectorXd values;
};

// One site's aligned data: genotypes, optional covariates, phenotype.
// Sample order is the genotype file's column order after alignment.
struct SiteDataset {
  std::string site_id;
  GenotypeMatrix genotypes;     // imputed, no missing entries
  CovariateMatrix covariates;   // k x n, k may be 0
  Eigen::VectorXd phenotype;    // length n
};

}  // namespace fedglmm
