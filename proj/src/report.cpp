#include "fedglmm/report.hpp"

#include <fstream>

#include "fedglmm/errors.hpp"
#include "fedglmm/numeric.hpp"

namespace fedglmm {

std::string fit_status_note(const glmm::FitResult& fit) {
  if (fit.ascent_violation) return "ascent_violation";
  switch (fit.status) {
    case glmm::FitStatus::kOk:
      return "";
    case glmm::FitStatus::kMaxIterations:
      return "max_iterations";
    case glmm::FitStatus::kDiverged:
      return "diverged";
    case glmm::FitStatus::kSingularHessian:
      return "singular_hessian";
  }
  return "";
}

io::ResultRow result_row_from_fit(const glmm::FitResult& fit) {
  io::ResultRow row;
  row.snp_id = fit.snp_id;
  row.has_stats = fit.inference_ok && fit.wald.se.size() > 0;
  if (fit.beta.size() > 0) row.beta = fit.beta(0);
  if (row.has_stats) {
    row.se = fit.wald.se(0);
    row.z = fit.wald.z(0);
    row.p_value = fit.wald.p(0);
  }
  row.n_iterations = fit.n_iterations;
  row.converged = fit.converged;
  row.sigma2 = fit.sigma2;
  row.note = fit_status_note(fit);
  return row;
}

void write_linear_results(const std::vector<scan::LinearResult>& results,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "SNP\tBETA\tSE\tT\tP\tNOTE\n";
  for (const scan::LinearResult& r : results) {
    out << r.snp_id << '\t';
    if (r.skipped) {
      out << "NA\tNA\tNA\tNA";
    } else {
      out << num::format_g17(r.beta) << '\t' << num::format_g17(r.se) << '\t'
          << num::format_g17(r.t) << '\t' << num::format_g17(r.p_value);
    }
    out << '\t' << (r.note.empty() ? "." : r.note) << '\n';
  }
  out.flush();
  if (!out) throw Error("write failure on '" + path.string() + "'");
}

}  // namespace fedglmm
