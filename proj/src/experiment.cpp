#include "fedglmm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "fedglmm/errors.hpp"
#include "fedglmm/linear_scan.hpp"
#include "fedglmm/log.hpp"
#include "fedglmm/numeric.hpp"
#include "fedglmm/projection.hpp"

namespace fedglmm::sim {

namespace {

// Variant indices ordered by ascending p-value; skipped variants sort last.
// Index order breaks ties so the ranking is reproducible.
std::vector<size_t> significance_order(const std::vector<scan::LinearResult>& results) {
  std::vector<size_t> order(results.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const bool skip_a = results[a].skipped;
    const bool skip_b = results[b].skipped;
    if (skip_a != skip_b) return skip_b;
    if (skip_a) return false;
    return results[a].p_value < results[b].p_value;
  });
  return order;
}

double top_overlap(const std::vector<size_t>& a, const std::vector<size_t>& b, size_t m) {
  std::unordered_set<size_t> in_a(a.begin(), a.begin() + static_cast<long>(m));
  size_t hits = 0;
  for (size_t i = 0; i < m; ++i) hits += in_a.count(b[i]);
  return static_cast<double>(hits) / static_cast<double>(m);
}

struct PairedSeries {
  std::vector<double> neglog_a;
  std::vector<double> neglog_b;
  std::vector<double> beta_a;
  std::vector<double> beta_b;
};

PairedSeries paired_series(const std::vector<scan::LinearResult>& a,
                           const std::vector<scan::LinearResult>& b) {
  PairedSeries out;
  for (size_t v = 0; v < a.size(); ++v) {
    if (a[v].skipped || b[v].skipped) continue;
    out.neglog_a.push_back(-std::log10(std::max(a[v].p_value, 1e-300)));
    out.neglog_b.push_back(-std::log10(std::max(b[v].p_value, 1e-300)));
    out.beta_a.push_back(a[v].beta);
    out.beta_b.push_back(b[v].beta);
  }
  return out;
}

CovariateMatrix empty_covariates(const std::vector<std::string>& sample_ids) {
  CovariateMatrix cov;
  cov.sample_ids = sample_ids;
  cov.values.resize(0, static_cast<Eigen::Index>(sample_ids.size()));
  return cov;
}

double median_of(std::vector<double> xs) {
  if (xs.empty()) throw ParamError("median of an empty series");
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

StudyConcordance score_study(int study, const SimSpec& spec, int n_components,
                             bool matched_reference, const std::vector<int>& top_sizes) {
  SimSpec study_spec = spec;
  study_spec.seed = derive_seed(spec.seed, "study", study);
  const SimOutput sim = simulate_populations(study_spec, matched_reference);

  // Own-PCA covariates: the study doubles as its own reference panel, which
  // makes the projection its principal-component scores.
  ReferencePanel self;
  self.variant_ids = sim.genotypes.variant_ids;
  self.sample_ids = sim.genotypes.sample_ids;
  self.dosages = sim.genotypes.dosages;
  const PcLoadings self_loadings = compute_reference_loadings(self, n_components);
  const CovariateMatrix cov_pca = project_study(sim.genotypes, self_loadings);

  const PcLoadings ref_loadings =
      compute_reference_loadings(sim.reference_panel, n_components);
  const CovariateMatrix cov_proj = project_study(sim.genotypes, ref_loadings);

  const std::vector<scan::LinearResult> res_pca =
      scan::linear_assoc_scan(sim.genotypes, sim.phenotype.values, cov_pca);
  const std::vector<scan::LinearResult> res_proj =
      scan::linear_assoc_scan(sim.genotypes, sim.phenotype.values, cov_proj);
  const std::vector<scan::LinearResult> res_none = scan::linear_assoc_scan(
      sim.genotypes, sim.phenotype.values, empty_covariates(sim.genotypes.sample_ids));

  const std::vector<size_t> order_pca = significance_order(res_pca);
  const std::vector<size_t> order_proj = significance_order(res_proj);
  const std::vector<size_t> order_none = significance_order(res_none);

  StudyConcordance sc;
  sc.study = study;
  for (const int m : top_sizes) {
    sc.proj_vs_pca.push_back(top_overlap(order_pca, order_proj, static_cast<size_t>(m)));
    sc.none_vs_pca.push_back(top_overlap(order_pca, order_none, static_cast<size_t>(m)));
  }
  const PairedSeries proj_pairs = paired_series(res_pca, res_proj);
  const PairedSeries none_pairs = paired_series(res_pca, res_none);
  sc.spearman_proj_pca = num::spearman(proj_pairs.neglog_a, proj_pairs.neglog_b);
  sc.spearman_none_pca = num::spearman(none_pairs.neglog_a, none_pairs.neglog_b);
  sc.effect_proj_pca = num::pearson(proj_pairs.beta_a, proj_pairs.beta_b);
  sc.effect_none_pca = num::pearson(none_pairs.beta_a, none_pairs.beta_b);
  return sc;
}

}  // namespace

double ExperimentReport::median_proj_vs_pca(size_t m_index) const {
  std::vector<double> xs;
  for (const StudyConcordance& sc : studies) xs.push_back(sc.proj_vs_pca.at(m_index));
  return median_of(std::move(xs));
}

double ExperimentReport::median_none_vs_pca(size_t m_index) const {
  std::vector<double> xs;
  for (const StudyConcordance& sc : studies) xs.push_back(sc.none_vs_pca.at(m_index));
  return median_of(std::move(xs));
}

ExperimentReport run_projection_experiment(int n_studies, const SimSpec& spec, int n_components,
                                           bool matched_reference, int threads) {
  if (n_studies < 1) throw ParamError("experiment: n_studies must be >= 1");
  if (n_components < 1) throw ParamError("experiment: n_components must be >= 1");
  if (threads < 1) throw ParamError("experiment: threads must be >= 1");
  validate_spec(spec);
  if (spec.trait.binary) {
    throw ParamError("experiment: the association scan is linear; use a quantitative trait");
  }

  ExperimentReport report;
  report.matched_reference = matched_reference;
  report.n_components = n_components;
  for (const int m : {10, 20, 50, 100}) {
    if (m <= spec.n_variants) report.top_sizes.push_back(m);
  }
  if (report.top_sizes.empty()) {
    report.top_sizes.push_back(static_cast<int>(spec.n_variants));
  }

  report.studies.resize(static_cast<size_t>(n_studies));
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::atomic<int> next{0};
  const int n_workers = std::min(threads, n_studies);
  const auto worker = [&] {
    while (true) {
      const int study = next.fetch_add(1);
      if (study >= n_studies) return;
      try {
        report.studies[static_cast<size_t>(study)] =
            score_study(study, spec, n_components, matched_reference, report.top_sizes);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_workers));
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  FEDGLMM_INFO("experiment finished: %d studies, %s reference, %d components", n_studies,
               matched_reference ? "matched" : "mismatched", n_components);
  return report;
}

std::string report_to_tsv(const ExperimentReport& report) {
  std::string out = "STUDY\tMETRIC\tM\tVALUE\n";
  const auto row = [&out](int study, const std::string& metric, const std::string& m,
                          double value) {
    out += std::to_string(study);
    out += '\t';
    out += metric;
    out += '\t';
    out += m;
    out += '\t';
    out += num::format_g17(value);
    out += '\n';
  };
  for (const StudyConcordance& sc : report.studies) {
    for (size_t i = 0; i < report.top_sizes.size(); ++i) {
      const std::string m = std::to_string(report.top_sizes[i]);
      row(sc.study, "proj_vs_pca", m, sc.proj_vs_pca.at(i));
      row(sc.study, "none_vs_pca", m, sc.none_vs_pca.at(i));
    }
    row(sc.study, "spearman_proj_pca", ".", sc.spearman_proj_pca);
    row(sc.study, "spearman_none_pca", ".", sc.spearman_none_pca);
    row(sc.study, "effect_proj_pca", ".", sc.effect_proj_pca);
    row(sc.study, "effect_none_pca", ".", sc.effect_none_pca);
  }
  return out;
}

}  // namespace fedglmm::sim
