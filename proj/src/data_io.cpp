#include "fedglmm/data_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"
#include "fedglmm/numeric.hpp"

namespace fedglmm::io {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Reads all lines, stripping a trailing \r and dropping a trailing empty
// line. Lines are returned 1-indexed alongside their numbers implicitly.
std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) throw Error("read failure on '" + path.string() + "'");
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_double_at(const std::filesystem::path& path, std::size_t line_no,
                       const std::string& token) {
  try {
    return num::parse_double(token, "numeric field");
  } catch (const ParamError& e) {
    throw ParseError(path.string(), line_no, e.what());
  }
}

long parse_long_at(const std::filesystem::path& path, std::size_t line_no,
                   const std::string& token) {
  const double v = parse_double_at(path, line_no, token);
  const long out = static_cast<long>(v);
  if (static_cast<double>(out) != v) {
    throw ParseError(path.string(), line_no, "expected an integer, got '" + token + "'");
  }
  return out;
}

double parse_dosage_token(const std::filesystem::path& path, std::size_t line_no,
                          const std::string& token) {
  if (token == "0") return 0.0;
  if (token == "1") return 1.0;
  if (token == "2") return 2.0;
  if (token == "NA") return kNaN;
  throw ParseError(path.string(), line_no,
                   "dosage token '" + token + "' not in {0,1,2,NA}");
}

void check_unique(const std::vector<std::string>& ids, const std::filesystem::path& path,
                  const char* what) {
  std::unordered_set<std::string> seen;
  seen.reserve(ids.size());
  for (const std::string& id : ids) {
    if (!seen.insert(id).second) {
      throw Error("duplicate " + std::string(what) + " '" + id + "' in '" + path.string() + "'");
    }
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("write failure on '" + path.string() + "'");
}

// Strips the counted-allele suffix plink appends to .raw variant columns
// (e.g. rs123_A -> rs123), but only when doing so keeps ids unique.
std::vector<std::string> strip_allele_suffixes(std::vector<std::string> ids) {
  std::vector<std::string> stripped = ids;
  for (std::string& id : stripped) {
    const std::size_t us = id.find_last_of('_');
    if (us == std::string::npos || us == 0 || us + 1 >= id.size()) continue;
    const std::string suffix = id.substr(us + 1);
    const bool allele = suffix.find_first_not_of("ACGT") == std::string::npos;
    if (allele) id.resize(us);
  }
  std::unordered_set<std::string> seen;
  for (const std::string& id : stripped) {
    if (!seen.insert(id).second) return ids;  // stripping would collide, keep originals
  }
  return stripped;
}

GenotypeMatrix load_plink_raw(const std::filesystem::path& path,
                              const std::vector<std::string>& lines) {
  const std::vector<std::string> header = split_whitespace(lines[0]);
  // FID IID PAT MAT SEX PHENOTYPE then one column per counted allele.
  constexpr std::size_t kMetaCols = 6;
  if (header.size() < kMetaCols + 1 || header[1] != "IID") {
    throw ParseError(path.string(), 1, "malformed plink .raw header");
  }
  GenotypeMatrix g;
  g.variant_ids = strip_allele_suffixes(
      std::vector<std::string>(header.begin() + kMetaCols, header.end()));
  const std::size_t n_variants = g.variant_ids.size();
  const std::size_t n_samples = lines.size() - 1;
  g.dosages.resize(static_cast<Eigen::Index>(n_variants), static_cast<Eigen::Index>(n_samples));
  g.sample_ids.reserve(n_samples);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> f = split_whitespace(lines[r]);
    if (f.size() != header.size()) {
      throw ParseError(path.string(), r + 1,
                       "expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()));
    }
    g.sample_ids.push_back(f[1]);
    for (std::size_t c = 0; c < n_variants; ++c) {
      g.dosages(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r - 1)) =
          parse_dosage_token(path, r + 1, f[kMetaCols + c]);
    }
  }
  check_unique(g.variant_ids, path, "variant id");
  check_unique(g.sample_ids, path, "sample id");
  return g;
}

GenotypeMatrix load_genotype_tsv(const std::filesystem::path& path,
                                 const std::vector<std::string>& lines) {
  const std::vector<std::string> header = split_tabs(lines[0]);
  if (header.size() < 2 || header[0] != "ID") {
    throw ParseError(path.string(), 1, "expected header starting with 'ID' and sample columns");
  }
  GenotypeMatrix g;
  g.sample_ids.assign(header.begin() + 1, header.end());
  const std::size_t n_samples = g.sample_ids.size();
  const std::size_t n_variants = lines.size() - 1;
  g.dosages.resize(static_cast<Eigen::Index>(n_variants), static_cast<Eigen::Index>(n_samples));
  g.variant_ids.reserve(n_variants);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> f = split_tabs(lines[r]);
    if (f.size() != n_samples + 1) {
      throw ParseError(path.string(), r + 1,
                       "expected " + std::to_string(n_samples + 1) + " columns, got " +
                           std::to_string(f.size()));
    }
    if (f[0].empty()) throw ParseError(path.string(), r + 1, "empty variant id");
    g.variant_ids.push_back(f[0]);
    for (std::size_t c = 0; c < n_samples; ++c) {
      g.dosages(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) =
          parse_dosage_token(path, r + 1, f[c + 1]);
    }
  }
  check_unique(g.variant_ids, path, "variant id");
  check_unique(g.sample_ids, path, "sample id");
  return g;
}

}  // namespace

GenotypeMatrix load_genotypes(const std::filesystem::path& path, double missing_cap) {
  if (!(missing_cap >= 0.0 && missing_cap <= 1.0)) {
    throw ParamError("missing_cap must be in [0,1]");
  }
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw ParseError(path.string(), 1, "empty genotype file");
  const bool plink_raw = lines[0].rfind("FID", 0) == 0;
  GenotypeMatrix g = plink_raw ? load_plink_raw(path, lines) : load_genotype_tsv(path, lines);
  for (Eigen::Index v = 0; v < g.n_variants(); ++v) {
    const Eigen::Index missing = g.dosages.row(v).array().isNaN().count();
    const double frac = static_cast<double>(missing) / static_cast<double>(g.n_samples());
    if (frac > missing_cap) {
      throw Error("variant '" + g.variant_ids[static_cast<std::size_t>(v)] + "' in '" +
                  path.string() + "' is " + num::format_g17(frac * 100.0) +
                  "% missing, above the cap of " + num::format_g17(missing_cap * 100.0) + "%");
    }
  }
  return g;
}

ReferencePanel load_reference_panel(const std::filesystem::path& path) {
  const GenotypeMatrix g = load_genotypes(path, 0.0);
  ReferencePanel panel;
  panel.variant_ids = g.variant_ids;
  panel.sample_ids = g.sample_ids;
  panel.dosages = g.dosages;
  return panel;
}

GenotypeMatrix impute_missing(const GenotypeMatrix& g) {
  GenotypeMatrix out = g;
  for (Eigen::Index v = 0; v < out.n_variants(); ++v) {
    double sum = 0.0;
    Eigen::Index observed = 0;
    for (Eigen::Index s = 0; s < out.n_samples(); ++s) {
      const double d = out.dosages(v, s);
      if (!std::isnan(d)) {
        sum += d;
        ++observed;
      }
    }
    if (observed == out.n_samples()) continue;
    if (observed == 0) {
      throw Error("variant '" + out.variant_ids[static_cast<std::size_t>(v)] +
                  "' has no observed dosages to impute from");
    }
    const double mean = sum / static_cast<double>(observed);
    for (Eigen::Index s = 0; s < out.n_samples(); ++s) {
      if (std::isnan(out.dosages(v, s))) out.dosages(v, s) = mean;
    }
  }
  return out;
}

void write_genotypes(const GenotypeMatrix& g, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "ID";
  for (const std::string& s : g.sample_ids) out << '\t' << s;
  out << '\n';
  for (Eigen::Index v = 0; v < g.n_variants(); ++v) {
    out << g.variant_ids[static_cast<std::size_t>(v)];
    for (Eigen::Index s = 0; s < g.n_samples(); ++s) {
      const double d = g.dosages(v, s);
      if (std::isnan(d)) {
        out << "\tNA";
      } else if (d == 0.0 || d == 1.0 || d == 2.0) {
        out << '\t' << static_cast<int>(d);
      } else {
        throw ParamError("dosage " + num::format_g17(d) + " for variant '" +
                         g.variant_ids[static_cast<std::size_t>(v)] +
                         "' is not writable as a {0,1,2,NA} token");
      }
    }
    out << '\n';
  }
  finish_out(out, path);
}

PhenotypeVector load_phenotype(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || split_tabs(lines[0]) != std::vector<std::string>{"SAMPLE", "PHENO"}) {
    throw ParseError(path.string(), 1, "expected header 'SAMPLE\\tPHENO'");
  }
  PhenotypeVector pheno;
  pheno.values.resize(static_cast<Eigen::Index>(lines.size() - 1));
  pheno.sample_ids.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> f = split_tabs(lines[r]);
    if (f.size() != 2) {
      throw ParseError(path.string(), r + 1,
                       "expected 2 columns, got " + std::to_string(f.size()));
    }
    pheno.sample_ids.push_back(f[0]);
    const double v = parse_double_at(path, r + 1, f[1]);
    if (!std::isfinite(v)) throw ParseError(path.string(), r + 1, "non-finite phenotype");
    pheno.values[static_cast<Eigen::Index>(r - 1)] = v;
  }
  check_unique(pheno.sample_ids, path, "sample id");
  return pheno;
}

void write_phenotype(const PhenotypeVector& pheno, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "SAMPLE\tPHENO\n";
  for (std::size_t i = 0; i < pheno.sample_ids.size(); ++i) {
    out << pheno.sample_ids[i] << '\t'
        << num::format_g17(pheno.values[static_cast<Eigen::Index>(i)]) << '\n';
  }
  finish_out(out, path);
}

void require_binary(const PhenotypeVector& pheno) {
  for (Eigen::Index i = 0; i < pheno.values.size(); ++i) {
    const double v = pheno.values[i];
    if (v != 0.0 && v != 1.0) {
      throw ParamError("phenotype for sample '" + pheno.sample_ids[static_cast<std::size_t>(i)] +
                       "' is " + num::format_g17(v) + "; a case/control model needs 0/1");
    }
  }
}

namespace {

std::vector<std::string> pc_header(const std::filesystem::path& path, const std::string& line,
                                   const std::string& lead) {
  const std::vector<std::string> header = split_tabs(line);
  if (header.empty() || header[0] != lead) {
    throw ParseError(path.string(), 1, "expected header starting with '" + lead + "'");
  }
  return header;
}

void check_pc_columns(const std::filesystem::path& path, const std::vector<std::string>& header,
                      std::size_t first_pc) {
  for (std::size_t i = first_pc; i < header.size(); ++i) {
    const std::string want = "PC" + std::to_string(i - first_pc + 1);
    if (header[i] != want) {
      throw ParseError(path.string(), 1,
                       "expected column '" + want + "', found '" + header[i] + "'");
    }
  }
}

}  // namespace

CovariateMatrix load_covariates(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw ParseError(path.string(), 1, "empty covariate file");
  const std::vector<std::string> header = pc_header(path, lines[0], "SAMPLE");
  if (header.size() < 2) throw ParseError(path.string(), 1, "no covariate columns");
  check_pc_columns(path, header, 1);
  const std::size_t k = header.size() - 1;
  CovariateMatrix cov;
  cov.values.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(lines.size() - 1));
  cov.sample_ids.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> f = split_tabs(lines[r]);
    if (f.size() != header.size()) {
      throw ParseError(path.string(), r + 1,
                       "expected " + std::to_string(header.size()) + " columns, got " +
                           std::to_string(f.size()));
    }
    cov.sample_ids.push_back(f[0]);
    for (std::size_t c = 0; c < k; ++c) {
      const double v = parse_double_at(path, r + 1, f[c + 1]);
      if (!std::isfinite(v)) throw ParseError(path.string(), r + 1, "non-finite covariate");
      cov.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r - 1)) = v;
    }
  }
  check_unique(cov.sample_ids, path, "sample id");
  return cov;
}

void write_covariates(const CovariateMatrix& cov, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "SAMPLE";
  for (Eigen::Index c = 0; c < cov.values.rows(); ++c) out << "\tPC" << (c + 1);
  out << '\n';
  for (std::size_t i = 0; i < cov.sample_ids.size(); ++i) {
    out << cov.sample_ids[i];
    for (Eigen::Index c = 0; c < cov.values.rows(); ++c) {
      out << '\t' << num::format_g17(cov.values(c, static_cast<Eigen::Index>(i)));
    }
    out << '\n';
  }
  finish_out(out, path);
}

PcLoadings load_loadings(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw ParseError(path.string(), 1, "empty loadings file");
  PcLoadings loadings;
  std::size_t header_line = 0;
  if (lines[0].rfind("#EIGENVALUES:", 0) == 0) {
    const std::vector<std::string> f = split_tabs(lines[0]);
    loadings.eigenvalues.resize(static_cast<Eigen::Index>(f.size() - 1));
    for (std::size_t i = 1; i < f.size(); ++i) {
      loadings.eigenvalues[static_cast<Eigen::Index>(i - 1)] = parse_double_at(path, 1, f[i]);
    }
    header_line = 1;
  }
  if (lines.size() <= header_line) throw ParseError(path.string(), header_line + 1, "missing header");
  const std::vector<std::string> header = pc_header(path, lines[header_line], "VARIANT");
  if (header.size() < 3 || header[1] != "MEAN") {
    throw ParseError(path.string(), header_line + 1,
                     "expected header 'VARIANT\\tMEAN\\tPC1...'");
  }
  check_pc_columns(path, header, 2);
  const std::size_t k = header.size() - 2;
  if (loadings.eigenvalues.size() != 0 &&
      loadings.eigenvalues.size() != static_cast<Eigen::Index>(k)) {
    throw ParseError(path.string(), 1, "eigenvalue count does not match PC columns");
  }
  const std::size_t n = lines.size() - header_line - 1;
  if (n == 0) throw ParseError(path.string(), header_line + 2, "no loading rows");
  loadings.loadings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  loadings.variant_means.resize(static_cast<Eigen::Index>(n));
  loadings.variant_ids.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = header_line + 2 + r;
    const std::vector<std::string> f = split_tabs(lines[header_line + 1 + r]);
    if (f.size() != header.size()) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(header.size()) + " columns, got " +
                           std::to_string(f.size()));
    }
    loadings.variant_ids.push_back(f[0]);
    loadings.variant_means[static_cast<Eigen::Index>(r)] = parse_double_at(path, line_no, f[1]);
    for (std::size_t c = 0; c < k; ++c) {
      loadings.loadings(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double_at(path, line_no, f[c + 2]);
    }
  }
  check_unique(loadings.variant_ids, path, "variant id");
  return loadings;
}

void write_loadings(const PcLoadings& loadings, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  if (loadings.eigenvalues.size() > 0) {
    out << "#EIGENVALUES:";
    for (Eigen::Index i = 0; i < loadings.eigenvalues.size(); ++i) {
      out << '\t' << num::format_g17(loadings.eigenvalues[i]);
    }
    out << '\n';
  }
  out << "VARIANT\tMEAN";
  for (Eigen::Index c = 0; c < loadings.loadings.cols(); ++c) out << "\tPC" << (c + 1);
  out << '\n';
  for (std::size_t r = 0; r < loadings.variant_ids.size(); ++r) {
    out << loadings.variant_ids[r] << '\t'
        << num::format_g17(loadings.variant_means[static_cast<Eigen::Index>(r)]);
    for (Eigen::Index c = 0; c < loadings.loadings.cols(); ++c) {
      out << '\t' << num::format_g17(loadings.loadings(static_cast<Eigen::Index>(r), c));
    }
    out << '\n';
  }
  finish_out(out, path);
}

namespace {

constexpr const char* kResultsHeader =
    "SNP\tCHR\tPOS\tBETA\tSE\tZ\tP\tN_ITER\tCONVERGED\tSIGMA2\tNOTE";

std::string note_out(const std::string& note) { return note.empty() ? "." : note; }

}  // namespace

void write_results(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << kResultsHeader << '\n';
  for (const ResultRow& row : table) {
    out << row.snp_id << '\t' << (row.chromosome.empty() ? "NA" : row.chromosome) << '\t';
    if (row.position >= 0) {
      out << row.position;
    } else {
      out << "NA";
    }
    if (row.has_stats) {
      out << '\t' << num::format_g17(row.beta) << '\t' << num::format_g17(row.se) << '\t'
          << num::format_g17(row.z) << '\t' << num::format_g17(row.p_value);
    } else {
      out << "\tNA\tNA\tNA\tNA";
    }
    out << '\t' << row.n_iterations << '\t' << (row.converged ? 1 : 0) << '\t'
        << num::format_g17(row.sigma2) << '\t' << note_out(row.note) << '\n';
  }
  finish_out(out, path);
}

ResultsTable load_results(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines[0] != kResultsHeader) {
    throw ParseError(path.string(), 1, "unrecognized results header");
  }
  ResultsTable table;
  table.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> f = split_tabs(lines[r]);
    if (f.size() != 11) {
      throw ParseError(path.string(), r + 1,
                       "expected 11 columns, got " + std::to_string(f.size()));
    }
    ResultRow row;
    row.snp_id = f[0];
    row.chromosome = f[1] == "NA" ? "" : f[1];
    row.position = f[2] == "NA" ? -1 : parse_long_at(path, r + 1, f[2]);
    row.has_stats = f[3] != "NA";
    if (row.has_stats) {
      row.beta = parse_double_at(path, r + 1, f[3]);
      row.se = parse_double_at(path, r + 1, f[4]);
      row.z = parse_double_at(path, r + 1, f[5]);
      row.p_value = parse_double_at(path, r + 1, f[6]);
    } else {
      for (int c = 4; c <= 6; ++c) {
        if (f[static_cast<std::size_t>(c)] != "NA") {
          throw ParseError(path.string(), r + 1, "partial NA stats row");
        }
      }
    }
    row.n_iterations = static_cast<int>(parse_long_at(path, r + 1, f[7]));
    if (f[8] != "0" && f[8] != "1") {
      throw ParseError(path.string(), r + 1, "CONVERGED must be 0 or 1");
    }
    row.converged = f[8] == "1";
    row.sigma2 = parse_double_at(path, r + 1, f[9]);
    row.note = f[10] == "." ? "" : f[10];
    table.push_back(std::move(row));
  }
  return table;
}

SiteDataset load_site_dataset(const std::string& site_id, const std::filesystem::path& genotypes,
                              const std::filesystem::path& phenotype,
                              const std::optional<std::filesystem::path>& covariates,
                              double missing_cap) {
  SiteDataset ds;
  ds.site_id = site_id;
  ds.genotypes = impute_missing(load_genotypes(genotypes, missing_cap));

  const PhenotypeVector pheno_raw = load_phenotype(phenotype);
  std::unordered_map<std::string, Eigen::Index> pheno_index;
  pheno_index.reserve(pheno_raw.sample_ids.size());
  for (std::size_t i = 0; i < pheno_raw.sample_ids.size(); ++i) {
    pheno_index.emplace(pheno_raw.sample_ids[i], static_cast<Eigen::Index>(i));
  }
  ds.phenotype.resize(ds.genotypes.n_samples());
  for (Eigen::Index s = 0; s < ds.genotypes.n_samples(); ++s) {
    const std::string& id = ds.genotypes.sample_ids[static_cast<std::size_t>(s)];
    const auto it = pheno_index.find(id);
    if (it == pheno_index.end()) {
      throw AlignmentError("sample '" + id + "' from '" + genotypes.string() +
                           "' has no phenotype in '" + phenotype.string() + "'");
    }
    ds.phenotype[s] = pheno_raw.values[it->second];
  }

  if (covariates) {
    const CovariateMatrix cov_raw = load_covariates(*covariates);
    std::unordered_map<std::string, Eigen::Index> cov_index;
    cov_index.reserve(cov_raw.sample_ids.size());
    for (std::size_t i = 0; i < cov_raw.sample_ids.size(); ++i) {
      cov_index.emplace(cov_raw.sample_ids[i], static_cast<Eigen::Index>(i));
    }
    ds.covariates.sample_ids = ds.genotypes.sample_ids;
    ds.covariates.values.resize(cov_raw.values.rows(), ds.genotypes.n_samples());
    for (Eigen::Index s = 0; s < ds.genotypes.n_samples(); ++s) {
      const std::string& id = ds.genotypes.sample_ids[static_cast<std::size_t>(s)];
      const auto it = cov_index.find(id);
      if (it == cov_index.end()) {
        throw AlignmentError("sample '" + id + "' from '" + genotypes.string() +
                             "' has no covariates in '" + covariates->string() + "'");
      }
      ds.covariates.values.col(s) = cov_raw.values.col(it->second);
    }
  }
  return ds;
}

}  // namespace fedglmm::io
