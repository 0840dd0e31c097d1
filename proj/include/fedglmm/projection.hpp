#pragma once

// Reference-panel principal components and projection of study genotypes
// onto them. All functions are pure and thread safe.

#include <Eigen/Dense>

#include "fedglmm/types.hpp"

namespace fedglmm {

// PCA of the per-variant-centered panel. Returns the top `n_components`
// left singular vectors with eigenvalues sigma_i^2 / (S - 1) and the
// per-variant means over the panel samples. Columns are sign-canonicalized
// so the largest-magnitude entry of each loading is positive.
// Throws ParamError when n_components exceeds min(N, S) and reports the
// achieved rank when the centered panel is rank deficient.
PcLoadings compute_reference_loadings(const ReferencePanel& panel, int n_components);

// Subtracts the panel variant means from each study dosage. Variant ids
// must match the loadings exactly (order included); study genotypes must
// already be imputed.
Eigen::MatrixXd center_study_genotypes(const GenotypeMatrix& study,
                                       const PcLoadings& loadings);

// Scores c_{k,j} = sum_i centered(i,j) * loading(i,k).
CovariateMatrix project_covariates(const Eigen::MatrixXd& centered,
                                   const PcLoadings& loadings,
                                   const std::vector<std::string>& sample_ids);

// Result of intersecting a study with a loadings file. Study variants not in
// the panel are dropped; panel variants absent from the study contribute
// nothing to the projection sum.
struct StudyPanelAlignment {
  GenotypeMatrix study;   // rows restricted to the shared variants, panel order
  PcLoadings loadings;    // rows restricted to the shared variants
  long dropped_study_variants = 0;
  long unmatched_panel_variants = 0;
};

StudyPanelAlignment align_study_to_panel(const GenotypeMatrix& study,
                                         const PcLoadings& loadings);

// Convenience pipeline: align, center, project. Logs a warning when study
// variants are dropped.
CovariateMatrix project_study(const GenotypeMatrix& study, const PcLoadings& loadings);

// Max-norm of loadings^T * loadings - I; used by validators and tests.
double orthonormality_residual(const PcLoadings& loadings);

}  // namespace fedglmm
