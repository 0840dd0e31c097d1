#pragma once

// Plain TSV formats for genotypes, phenotypes, covariates, loadings, and
// result tables, plus a reader for plink additive-recoded .raw exports.
// Loaders reject rather than coerce; parse failures carry file and line.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedglmm/types.hpp"

namespace fedglmm::io {

inline constexpr double kDefaultMissingCap = 0.1;

// Genotype TSV: header `ID<TAB>sample...`, one row per variant, dosage
// tokens in {0,1,2,NA}. Files whose header starts with FID are parsed as
// plink .raw (samples in rows, variant columns carry an allele suffix).
// Missing entries come back as NaN; per-variant missingness above
// `missing_cap` is an error naming the variant.
GenotypeMatrix load_genotypes(const std::filesystem::path& path,
                              double missing_cap = kDefaultMissingCap);

// Same format, but any missing entry is an error. Used for reference panels.
ReferencePanel load_reference_panel(const std::filesystem::path& path);

// Replaces each NaN with the variant's observed mean dosage.
GenotypeMatrix impute_missing(const GenotypeMatrix& g);

// Writes integer dosages with NA for NaN; throws ParamError on any value
// outside {0,1,2,NaN} so imputed matrices are not round-tripped by accident.
void write_genotypes(const GenotypeMatrix& g, const std::filesystem::path& path);

// Phenotype TSV: header `SAMPLE<TAB>PHENO`, any finite value. Binary checks
// happen where a model requires them.
PhenotypeVector load_phenotype(const std::filesystem::path& path);
void write_phenotype(const PhenotypeVector& pheno, const std::filesystem::path& path);
void require_binary(const PhenotypeVector& pheno);

// Covariate TSV: header `SAMPLE<TAB>PC1..PCk`.
CovariateMatrix load_covariates(const std::filesystem::path& path);
void write_covariates(const CovariateMatrix& cov, const std::filesystem::path& path);

// Loadings TSV: optional `#EIGENVALUES:` comment, header
// `VARIANT<TAB>MEAN<TAB>PC1..PCk`, one row per panel variant.
PcLoadings load_loadings(const std::filesystem::path& path);
void write_loadings(const PcLoadings& loadings, const std::filesystem::path& path);

struct ResultRow {
  std::string snp_id;
  std::string chromosome;  // empty when unknown
  long position = -1;      // <0 when unknown
  bool has_stats = false;
  double beta = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 0.0;
  int n_iterations = 0;
  bool converged = false;
  double sigma2 = 0.0;
  std::string note;  // reason code for skipped or failed SNPs
};

using ResultsTable = std::vector<ResultRow>;

// Fixed column order, floats at 17 significant digits, rows in input SNP
// order, NA sentinels for absent stats. Round-trips losslessly.
void write_results(const ResultsTable& table, const std::filesystem::path& path);
ResultsTable load_results(const std::filesystem::path& path);

// Loads and assembles one site's modeling inputs: genotypes (imputed),
// phenotype, and optional covariates, all reordered to the genotype file's
// sample order. Sample-set mismatches are alignment errors.
SiteDataset load_site_dataset(const std::string& site_id, const std::filesystem::path& genotypes,
                              const std::filesystem::path& phenotype,
                              const std::optional<std::filesystem::path>& covariates,
                              double missing_cap = kDefaultMissingCap);

}  // namespace fedglmm::io
