#pragma once

// Glue between fit results and the on-disk tables. Kept in one place so the
// pooled and the federated paths emit byte-identical rows.

#include <filesystem>
#include <string>
#include <vector>

#include "fedglmm/data_io.hpp"
#include "fedglmm/glmm.hpp"
#include "fedglmm/linear_scan.hpp"

namespace fedglmm {

// Reason code attached to a finished fit; empty for a clean convergent fit.
std::string fit_status_note(const glmm::FitResult& fit);

// Flattens a fit into the results-table schema. The reported coefficient is
// the genotype effect (column 0 of the design).
io::ResultRow result_row_from_fit(const glmm::FitResult& fit);

// OLS scan table: SNP, BETA, SE, T, P, NOTE with NA for skipped variants.
void write_linear_results(const std::vector<scan::LinearResult>& results,
                          const std::filesystem::path& path);

}  // namespace fedglmm
