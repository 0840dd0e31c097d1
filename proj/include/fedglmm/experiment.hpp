#pragma once

// Repeated-simulation benchmark of stratification strategies. Every study is
// scanned three ways (own-PCA covariates, reference-projection covariates,
// no covariates) and the projection and no-correction scans are each scored
// against the own-PCA scan: top-m hit overlap, rank correlation of the
// significance, and agreement of the effect estimates.

#include <cstdint>
#include <string>
#include <vector>

#include "fedglmm/simulate.hpp"

namespace fedglmm::sim {

struct StudyConcordance {
  int study = 0;
  std::vector<double> proj_vs_pca;  // one fraction per entry of top_sizes
  std::vector<double> none_vs_pca;
  double spearman_proj_pca = 0.0;  // rank correlation of -log10 p
  double spearman_none_pca = 0.0;
  double effect_proj_pca = 0.0;  // Pearson correlation of effect estimates
  double effect_none_pca = 0.0;
};

struct ExperimentReport {
  bool matched_reference = true;
  int n_components = 0;
  std::vector<int> top_sizes;
  std::vector<StudyConcordance> studies;

  // Across-study medians for the top-m overlap at top_sizes[m_index].
  double median_proj_vs_pca(size_t m_index) const;
  double median_none_vs_pca(size_t m_index) const;
};

// Runs n_studies independent simulations of `spec` (per-study seeds derived
// from spec.seed) and scores them. The spec must describe a quantitative
// trait. Studies run on up to `threads` workers; results are identical for
// any thread count.
ExperimentReport run_projection_experiment(int n_studies, const SimSpec& spec, int n_components,
                                           bool matched_reference, int threads = 1);

// Long-format table: STUDY, METRIC, M, VALUE. Scalar metrics carry "." in M.
std::string report_to_tsv(const ExperimentReport& report);

}  // namespace fedglmm::sim
