#include "fedglmm/projection.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"

namespace fedglmm {

namespace {

// Flip each column so its largest-magnitude entry is positive. Ties resolve
// to the lowest row index, which makes repeated runs bit-identical.
void canonicalize_signs(Eigen::MatrixXd& loadings) {
  for (Eigen::Index c = 0; c < loadings.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < loadings.rows(); ++r) {
      double a = std::fabs(loadings(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (loadings(best, c) < 0.0) loadings.col(c) = -loadings.col(c);
  }
}

}  // namespace

PcLoadings compute_reference_loadings(const ReferencePanel& panel, int n_components) {
  const Eigen::Index n_var = panel.n_variants();
  const Eigen::Index n_smp = panel.n_samples();
  if (n_var < 1 || n_smp < 2) {
    throw ParamError("reference panel needs at least 1 variant and 2 samples");
  }
  if (panel.dosages.hasNaN()) {
    throw ParamError("reference panel has missing dosages");
  }
  if (n_components < 1 || n_components > std::min(n_var, n_smp)) {
    throw ParamError("requested " + std::to_string(n_components) +
                     " components but panel supports at most " +
                     std::to_string(std::min(n_var, n_smp)));
  }

  Eigen::VectorXd means = panel.dosages.rowwise().mean();
  Eigen::MatrixXd centered = panel.dosages.colwise() - means;

  // Eigendecompose the Gram matrix on the smaller side; the left singular
  // vectors follow from centered * V * sigma^-1 when samples are fewer.
  Eigen::MatrixXd basis;         // N x k left singular vectors
  Eigen::VectorXd sing_sq;       // descending squared singular values
  if (n_var <= n_smp) {
    Eigen::MatrixXd cov = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
      throw ParamError("eigendecomposition of panel covariance failed");
    }
    // SelfAdjointEigenSolver sorts ascending; take from the top.
    sing_sq.resize(n_var);
    basis.resize(n_var, n_var);
    for (Eigen::Index i = 0; i < n_var; ++i) {
      sing_sq[i] = eig.eigenvalues()[n_var - 1 - i];
      basis.col(i) = eig.eigenvectors().col(n_var - 1 - i);
    }
  } else {
    Eigen::MatrixXd gram = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
      throw ParamError("eigendecomposition of panel Gram matrix failed");
    }
    sing_sq.resize(n_smp);
    Eigen::MatrixXd right(n_smp, n_smp);
    for (Eigen::Index i = 0; i < n_smp; ++i) {
      sing_sq[i] = eig.eigenvalues()[n_smp - 1 - i];
      right.col(i) = eig.eigenvectors().col(n_smp - 1 - i);
    }
    basis.resize(n_var, n_smp);
    for (int i = 0; i < n_components; ++i) {
      double s = std::sqrt(std::max(sing_sq[i], 0.0));
      if (s > 0.0) basis.col(i) = centered * right.col(i) / s;
    }
  }

  double lead = std::max(sing_sq[0], 0.0);
  double rank_tol = static_cast<double>(std::max(n_var, n_smp)) *
                    std::numeric_limits<double>::epsilon() * lead;
  int rank = 0;
  for (Eigen::Index i = 0; i < sing_sq.size(); ++i) {
    if (sing_sq[i] > rank_tol) ++rank;
  }
  if (rank < n_components) {
    throw ParamError("panel rank is " + std::to_string(rank) + ", cannot extract " +
                     std::to_string(n_components) + " components");
  }

  PcLoadings out;
  out.variant_ids = panel.variant_ids;
  out.variant_means = means;
  out.loadings = basis.leftCols(n_components);
  out.eigenvalues.resize(n_components);
  for (int i = 0; i < n_components; ++i) {
    out.eigenvalues[i] = sing_sq[i] / static_cast<double>(n_smp - 1);
  }

  // The Gram route can lose orthogonality on ill-conditioned panels; polish
  // with a thin QR when the residual is measurable.
  if (orthonormality_residual(out) > 1e-12) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(out.loadings);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n_var, n_components);
    out.loadings = q;
  }
  canonicalize_signs(out.loadings);
  return out;
}

Eigen::MatrixXd center_study_genotypes(const GenotypeMatrix& study,
                                       const PcLoadings& loadings) {
  if (study.variant_ids.size() != loadings.variant_ids.size()) {
    throw AlignmentError("study has " + std::to_string(study.variant_ids.size()) +
                         " variants but loadings have " +
                         std::to_string(loadings.variant_ids.size()));
  }
  for (size_t i = 0; i < study.variant_ids.size(); ++i) {
    if (study.variant_ids[i] != loadings.variant_ids[i]) {
      throw AlignmentError("variant order mismatch at row " + std::to_string(i) +
                           ": study '" + study.variant_ids[i] + "' vs loadings '" +
                           loadings.variant_ids[i] + "'");
    }
  }
  if (study.dosages.hasNaN()) {
    throw ParamError("study genotypes must be imputed before centering");
  }
  return study.dosages.colwise() - loadings.variant_means;
}

CovariateMatrix project_covariates(const Eigen::MatrixXd& centered,
                                   const PcLoadings& loadings,
                                   const std::vector<std::string>& sample_ids) {
  if (centered.rows() != loadings.loadings.rows()) {
    throw ParamError("centered matrix has " + std::to_string(centered.rows()) +
                     " rows but loadings have " +
                     std::to_string(loadings.loadings.rows()));
  }
  if (static_cast<Eigen::Index>(sample_ids.size()) != centered.cols()) {
    throw ParamError("sample id count does not match centered matrix columns");
  }
  CovariateMatrix out;
  out.sample_ids = sample_ids;
  out.values = loadings.loadings.transpose() * centered;
  return out;
}

StudyPanelAlignment align_study_to_panel(const GenotypeMatrix& study,
                                         const PcLoadings& loadings) {
  std::unordered_map<std::string, Eigen::Index> study_rows;
  study_rows.reserve(study.variant_ids.size());
  for (size_t i = 0; i < study.variant_ids.size(); ++i) {
    study_rows.emplace(study.variant_ids[i], static_cast<Eigen::Index>(i));
  }

  std::vector<Eigen::Index> panel_keep;
  std::vector<Eigen::Index> study_keep;
  for (size_t i = 0; i < loadings.variant_ids.size(); ++i) {
    auto it = study_rows.find(loadings.variant_ids[i]);
    if (it != study_rows.end()) {
      panel_keep.push_back(static_cast<Eigen::Index>(i));
      study_keep.push_back(it->second);
    }
  }
  if (panel_keep.empty()) {
    throw AlignmentError("no shared variants between study and panel loadings");
  }

  StudyPanelAlignment out;
  const Eigen::Index m = static_cast<Eigen::Index>(panel_keep.size());
  out.study.sample_ids = study.sample_ids;
  out.study.variant_ids.reserve(m);
  out.study.dosages.resize(m, study.n_samples());
  out.loadings.variant_ids.reserve(m);
  out.loadings.loadings.resize(m, loadings.n_components());
  out.loadings.variant_means.resize(m);
  out.loadings.eigenvalues = loadings.eigenvalues;
  for (Eigen::Index r = 0; r < m; ++r) {
    out.study.variant_ids.push_back(loadings.variant_ids[panel_keep[r]]);
    out.study.dosages.row(r) = study.dosages.row(study_keep[r]);
    out.loadings.variant_ids.push_back(loadings.variant_ids[panel_keep[r]]);
    out.loadings.loadings.row(r) = loadings.loadings.row(panel_keep[r]);
    out.loadings.variant_means[r] = loadings.variant_means[panel_keep[r]];
  }
  out.dropped_study_variants =
      static_cast<long>(study.variant_ids.size()) - static_cast<long>(m);
  out.unmatched_panel_variants =
      static_cast<long>(loadings.variant_ids.size()) - static_cast<long>(m);
  return out;
}

CovariateMatrix project_study(const GenotypeMatrix& study, const PcLoadings& loadings) {
  StudyPanelAlignment aligned = align_study_to_panel(study, loadings);
  if (aligned.dropped_study_variants > 0) {
    FEDGLMM_WARN("dropping %ld study variants absent from the panel loadings",
                 aligned.dropped_study_variants);
  }
  if (aligned.unmatched_panel_variants > 0) {
    FEDGLMM_WARN("%ld panel variants are absent from the study and contribute no score",
                 aligned.unmatched_panel_variants);
  }
  Eigen::MatrixXd centered = center_study_genotypes(aligned.study, aligned.loadings);
  return project_covariates(centered, aligned.loadings, aligned.study.sample_ids);
}

double orthonormality_residual(const PcLoadings& loadings) {
  const Eigen::Index k = loadings.n_components();
  Eigen::MatrixXd gram = loadings.loadings.transpose() * loadings.loadings;
  return (gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
}

}  // namespace fedglmm
