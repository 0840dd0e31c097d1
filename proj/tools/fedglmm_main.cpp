// Command-line front end. One subcommand per pipeline stage: reference PCA,
// projection, simulation, k-means partitioning, pooled and federated GLMM
// scans, the OLS scan, and the repeated-simulation stratification benchmark.
// Exit codes: 0 success, 1 user error, 2 internal error.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedglmm/data_io.hpp"
#include "fedglmm/errors.hpp"
#include "fedglmm/experiment.hpp"
#include "fedglmm/fed/channel.hpp"
#include "fedglmm/fed/coordinator.hpp"
#include "fedglmm/fed/masking.hpp"
#include "fedglmm/fed/site.hpp"
#include "fedglmm/fed/tcp.hpp"
#include "fedglmm/glmm.hpp"
#include "fedglmm/kmeans.hpp"
#include "fedglmm/linear_scan.hpp"
#include "fedglmm/log.hpp"
#include "fedglmm/numeric.hpp"
#include "fedglmm/projection.hpp"
#include "fedglmm/report.hpp"
#include "fedglmm/simulate.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fedglmm {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error("write failure on '" + path + "'");
}

std::string auth_token() {
  const char* tok = std::getenv("FEDGLMM_TOKEN");
  return tok ? tok : "";
}

std::string dir_site_id(const std::string& dir) {
  fs::path p(dir);
  if (p.filename().empty()) p = p.parent_path();
  const std::string id = p.filename().string();
  if (id.empty()) throw ConfigError("cannot derive a site id from '" + dir + "'");
  return id;
}

SiteDataset load_site_dir(const std::string& dir, double missing_cap) {
  const fs::path base(dir);
  const fs::path cov = base / "covariates.tsv";
  std::optional<fs::path> cov_path;
  if (fs::exists(cov)) cov_path = cov;
  return io::load_site_dataset(dir_site_id(dir), base / "genotypes.tsv",
                               base / "phenotype.tsv", cov_path, missing_cap);
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// SNP scan list: explicit CSV wins, then a one-per-line file, then every
// variant of the fallback list.
std::vector<std::string> resolve_snps(const std::string& csv, const std::string& file,
                                      const std::vector<std::string>& fallback) {
  if (!csv.empty()) return split_csv(csv);
  if (!file.empty()) {
    std::vector<std::string> out;
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open snp list '" + file + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) out.push_back(line);
    }
    if (out.empty()) throw ConfigError("snp list '" + file + "' is empty");
    return out;
  }
  return fallback;
}

void require_matching_sites(const std::vector<SiteDataset>& sites) {
  if (sites.empty()) throw ConfigError("need at least one site");
  const Eigen::Index p = sites.front().covariates.values.rows();
  for (const SiteDataset& ds : sites) {
    if (ds.covariates.values.rows() != p) {
      throw ConfigError("site '" + ds.site_id + "' holds " +
                        std::to_string(ds.covariates.values.rows()) +
                        " covariates, site '" + sites.front().site_id + "' holds " +
                        std::to_string(p));
    }
    if (ds.genotypes.variant_ids != sites.front().genotypes.variant_ids) {
      throw AlignmentError("variant lists of sites '" + sites.front().site_id + "' and '" +
                           ds.site_id + "' differ");
    }
  }
}

struct FitCliOptions {
  double tol = 1e-6;
  int max_iter = 50;
  double sigma2_init = 0.1;
  bool no_sigma2_update = false;

  glmm::FitOptions to_fit() const {
    glmm::FitOptions fit;
    fit.tol = tol;
    fit.max_outer_iterations = max_iter;
    fit.sigma2_init = sigma2_init;
    fit.sigma2_update_enabled = !no_sigma2_update;
    return fit;
  }
};

void add_fit_options(CLI::App* sub, FitCliOptions& opts) {
  sub->add_option("--tol", opts.tol, "convergence tolerance on the parameter step");
  sub->add_option("--max-iter", opts.max_iter, "outer iteration cap");
  sub->add_option("--sigma2-init", opts.sigma2_init, "initial random-intercept variance");
  sub->add_flag("--no-sigma2-update", opts.no_sigma2_update,
                "keep the variance pinned at its initial value");
}

void write_transcript(const std::string& path, const fed::RecordingChannel::Transcript& entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  for (const fed::RecordingChannel::Entry& e : entries) {
    out << (e.outgoing ? "> " : "< ") << e.line << '\n';
  }
  out.flush();
  if (!out) throw Error("write failure on '" + path + "'");
}

// ---- pca-ref ----------------------------------------------------------

int cmd_pca_ref(const std::string& panel_path, int components, const std::string& out) {
  const ReferencePanel panel = io::load_reference_panel(panel_path);
  const PcLoadings loadings = compute_reference_loadings(panel, components);
  io::write_loadings(loadings, out);
  FEDGLMM_INFO("wrote %d-component loadings for %zu variants to %s", components,
               loadings.variant_ids.size(), out.c_str());
  return 0;
}

// ---- project ----------------------------------------------------------

int cmd_project(const std::string& genotypes_path, const std::string& loadings_path,
                const std::string& out, double missing_cap) {
  const GenotypeMatrix raw = io::load_genotypes(genotypes_path, missing_cap);
  const GenotypeMatrix study = io::impute_missing(raw);
  const PcLoadings loadings = io::load_loadings(loadings_path);
  const CovariateMatrix cov = project_study(study, loadings);
  io::write_covariates(cov, out);
  FEDGLMM_INFO("projected %ld samples onto %ld components", static_cast<long>(cov.values.cols()),
               static_cast<long>(cov.values.rows()));
  return 0;
}

// ---- simulate ---------------------------------------------------------

int cmd_simulate(const std::string& spec_path, const std::string& out_dir, bool mismatched,
                 long reference_size, bool seed_set, std::uint64_t seed) {
  sim::SimSpec spec = sim::spec_from_json(read_file(spec_path));
  if (seed_set) spec.seed = seed;
  const bool matched = !mismatched;
  const sim::SimOutput out = sim::simulate_populations(spec, matched, reference_size);

  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  io::write_genotypes(out.genotypes, base / "genotypes.tsv");
  io::write_phenotype(out.phenotype, base / "phenotype.tsv");
  GenotypeMatrix panel;
  panel.variant_ids = out.reference_panel.variant_ids;
  panel.sample_ids = out.reference_panel.sample_ids;
  panel.dosages = out.reference_panel.dosages;
  io::write_genotypes(panel, base / "panel.tsv");

  std::string truth = "VARIANT\tEFFECT\n";
  for (const sim::CausalEffect& c : out.causal_truth) {
    truth += c.variant_id + "\t" + num::format_g17(c.effect) + "\n";
  }
  write_file((base / "truth.tsv").string(), truth);

  std::string samples = "SAMPLE\tPOPULATION\tGENDER\n";
  for (size_t i = 0; i < out.genotypes.sample_ids.size(); ++i) {
    samples += out.genotypes.sample_ids[i] + "\t" + std::to_string(out.population[i]) + "\t" +
               std::to_string(out.gender[i]) + "\n";
  }
  write_file((base / "samples.tsv").string(), samples);

  json manifest;
  manifest["spec"] = json::parse(sim::spec_to_json(spec));
  manifest["matched_reference"] = matched;
  manifest["reference_size"] = reference_size;
  manifest["reference_seed"] =
      sim::derive_seed(spec.seed, matched ? "reference-matched" : "reference-mismatched");
  manifest["files"] = {{"genotypes", "genotypes.tsv"}, {"phenotype", "phenotype.tsv"},
                       {"panel", "panel.tsv"},         {"truth", "truth.tsv"},
                       {"samples", "samples.tsv"}};
  write_file((base / "manifest.json").string(), manifest.dump(2) + "\n");
  FEDGLMM_INFO("simulated %ld samples x %ld variants into %s", spec.n_individuals,
               spec.n_variants, out_dir.c_str());
  return 0;
}

// ---- partition --------------------------------------------------------

GenotypeMatrix subset_genotypes(const GenotypeMatrix& g, const std::vector<long>& cols) {
  GenotypeMatrix out;
  out.variant_ids = g.variant_ids;
  out.sample_ids.reserve(cols.size());
  out.dosages.resize(g.n_variants(), static_cast<Eigen::Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) {
    out.sample_ids.push_back(g.sample_ids[static_cast<size_t>(cols[j])]);
    out.dosages.col(static_cast<Eigen::Index>(j)) = g.dosages.col(cols[j]);
  }
  return out;
}

int cmd_partition(const std::string& genotypes_path, const std::string& phenotype_path,
                  const std::string& covariates_path, int k, std::uint64_t seed,
                  const std::string& out_dir, bool on_genotypes, double missing_cap) {
  const GenotypeMatrix study = io::impute_missing(io::load_genotypes(genotypes_path, missing_cap));
  const PhenotypeVector pheno = io::load_phenotype(phenotype_path);

  std::optional<CovariateMatrix> cov;
  if (!covariates_path.empty()) cov = io::load_covariates(covariates_path);
  if (!on_genotypes && !cov) {
    throw ConfigError("partition clusters on covariates by default; pass --covariates or "
                      "--on-genotypes");
  }

  const long n = study.n_samples();
  // Index lookups into the auxiliary tables, keyed by sample id.
  std::unordered_map<std::string, long> pheno_at, cov_at;
  for (size_t i = 0; i < pheno.sample_ids.size(); ++i) {
    pheno_at[pheno.sample_ids[i]] = static_cast<long>(i);
  }
  if (cov) {
    for (size_t i = 0; i < cov->sample_ids.size(); ++i) {
      cov_at[cov->sample_ids[i]] = static_cast<long>(i);
    }
  }
  const auto lookup = [](const std::unordered_map<std::string, long>& at,
                         const std::string& sample, const char* what) {
    const auto it = at.find(sample);
    if (it == at.end()) {
      throw AlignmentError(std::string(what) + " is missing sample '" + sample + "'");
    }
    return it->second;
  };

  Eigen::MatrixXd features;
  if (on_genotypes) {
    features = study.dosages.transpose();
  } else {
    features.resize(n, cov->values.rows());
    for (long i = 0; i < n; ++i) {
      features.row(i) =
          cov->values.col(lookup(cov_at, study.sample_ids[static_cast<size_t>(i)], "covariates"))
              .transpose();
    }
  }
  const std::vector<int> labels = sim::kmeans_partition(features, k, seed);

  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  std::string assignments = "SAMPLE\tSITE\n";
  for (long i = 0; i < n; ++i) {
    assignments += study.sample_ids[static_cast<size_t>(i)] + "\tsite" +
                   std::to_string(labels[static_cast<size_t>(i)]) + "\n";
  }
  write_file((base / "assignments.tsv").string(), assignments);

  for (int site = 0; site < k; ++site) {
    std::vector<long> cols;
    for (long i = 0; i < n; ++i) {
      if (labels[static_cast<size_t>(i)] == site) cols.push_back(i);
    }
    const fs::path dir = base / ("site" + std::to_string(site));
    fs::create_directories(dir);
    const GenotypeMatrix sub = subset_genotypes(study, cols);
    io::write_genotypes(sub, dir / "genotypes.tsv");

    PhenotypeVector sub_pheno;
    sub_pheno.sample_ids = sub.sample_ids;
    sub_pheno.values.resize(static_cast<Eigen::Index>(cols.size()));
    for (size_t j = 0; j < cols.size(); ++j) {
      sub_pheno.values[static_cast<Eigen::Index>(j)] =
          pheno.values[lookup(pheno_at, sub.sample_ids[j], "phenotype")];
    }
    io::write_phenotype(sub_pheno, dir / "phenotype.tsv");

    if (cov) {
      CovariateMatrix sub_cov;
      sub_cov.sample_ids = sub.sample_ids;
      sub_cov.values.resize(cov->values.rows(), static_cast<Eigen::Index>(cols.size()));
      for (size_t j = 0; j < cols.size(); ++j) {
        sub_cov.values.col(static_cast<Eigen::Index>(j)) =
            cov->values.col(lookup(cov_at, sub.sample_ids[j], "covariates"));
      }
      io::write_covariates(sub_cov, dir / "covariates.tsv");
    }
    FEDGLMM_INFO("site%d: %zu samples", site, cols.size());
  }
  return 0;
}

// ---- fit-pooled -------------------------------------------------------

int cmd_fit_pooled(std::vector<std::string> site_dirs, const std::string& snps_csv,
                   const std::string& snp_file, const FitCliOptions& fit_cli,
                   const std::string& out, double missing_cap) {
  std::vector<SiteDataset> sites;
  sites.reserve(site_dirs.size());
  for (const std::string& dir : site_dirs) sites.push_back(load_site_dir(dir, missing_cap));
  std::sort(sites.begin(), sites.end(),
            [](const SiteDataset& a, const SiteDataset& b) { return a.site_id < b.site_id; });
  require_matching_sites(sites);

  std::unordered_map<std::string, long> variant_at;
  const std::vector<std::string>& variants = sites.front().genotypes.variant_ids;
  for (size_t v = 0; v < variants.size(); ++v) variant_at[variants[v]] = static_cast<long>(v);

  const std::vector<std::string> snps = resolve_snps(snps_csv, snp_file, variants);
  const glmm::FitOptions options = fit_cli.to_fit();

  io::ResultsTable table;
  table.reserve(snps.size());
  for (const std::string& snp : snps) {
    const auto at = variant_at.find(snp);
    if (at == variant_at.end()) throw ConfigError("unknown snp id '" + snp + "'");
    std::vector<glmm::SiteData> data;
    data.reserve(sites.size());
    for (const SiteDataset& ds : sites) data.push_back(glmm::make_site_data(ds, at->second));
    const glmm::FitResult fit = glmm::fit_pooled(data, options);
    table.push_back(result_row_from_fit(fit));
  }
  io::write_results(table, out);
  FEDGLMM_INFO("pooled fit of %zu snp(s) across %zu site(s) written to %s", snps.size(),
               sites.size(), out.c_str());
  return 0;
}

// ---- scan-linear ------------------------------------------------------

int cmd_scan_linear(const std::string& genotypes_path, const std::string& phenotype_path,
                    const std::string& covariates_path, const std::string& out,
                    double missing_cap) {
  const GenotypeMatrix study = io::impute_missing(io::load_genotypes(genotypes_path, missing_cap));
  const PhenotypeVector pheno = io::load_phenotype(phenotype_path);
  if (pheno.sample_ids != study.sample_ids) {
    // Reuse the site loader's alignment by demanding matching order here;
    // the simulator and partitioner always write aligned files.
    throw AlignmentError("phenotype sample order does not match the genotype file");
  }
  CovariateMatrix cov;
  cov.sample_ids = study.sample_ids;
  cov.values.resize(0, study.n_samples());
  if (!covariates_path.empty()) {
    cov = io::load_covariates(covariates_path);
    if (cov.sample_ids != study.sample_ids) {
      throw AlignmentError("covariate sample order does not match the genotype file");
    }
  }
  const std::vector<scan::LinearResult> results =
      scan::linear_assoc_scan(study, pheno.values, cov);
  write_linear_results(results, out);
  FEDGLMM_INFO("linear scan of %zu variant(s) written to %s", results.size(), out.c_str());
  return 0;
}

// ---- experiment-projection -------------------------------------------

int cmd_experiment(const std::string& spec_path, int studies, int components, bool mismatched,
                   int threads, bool seed_set, std::uint64_t seed, const std::string& out,
                   const std::string& summary_out) {
  sim::SimSpec spec = sim::spec_from_json(read_file(spec_path));
  if (seed_set) spec.seed = seed;
  const sim::ExperimentReport report =
      sim::run_projection_experiment(studies, spec, components, !mismatched, threads);
  write_file(out, sim::report_to_tsv(report));

  json summary;
  summary["matched_reference"] = report.matched_reference;
  summary["n_components"] = report.n_components;
  summary["n_studies"] = studies;
  summary["top_sizes"] = report.top_sizes;
  std::vector<double> med_proj, med_none;
  for (size_t m = 0; m < report.top_sizes.size(); ++m) {
    med_proj.push_back(report.median_proj_vs_pca(m));
    med_none.push_back(report.median_none_vs_pca(m));
  }
  summary["median_proj_vs_pca"] = med_proj;
  summary["median_none_vs_pca"] = med_none;
  if (!summary_out.empty()) write_file(summary_out, summary.dump(2) + "\n");
  for (size_t m = 0; m < report.top_sizes.size(); ++m) {
    FEDGLMM_INFO("top-%d concordance vs own PCA: projection %.3f, none %.3f",
                 report.top_sizes[m], med_proj[m], med_none[m]);
  }
  return 0;
}

// ---- serve-site -------------------------------------------------------

int cmd_serve_site(const std::string& site_dir, const std::string& connect,
                   const std::string& mask_connect, const std::string& transcript_path,
                   bool noise_seed_set, std::uint64_t noise_seed, std::uint64_t seed,
                   const std::string& results_out, double missing_cap) {
  SiteDataset data = load_site_dir(site_dir, missing_cap);
  const std::string site_id = data.site_id;

  fed::SiteWorkerConfig config;
  config.token = auth_token();
  config.noise_seed =
      noise_seed_set ? noise_seed : sim::derive_seed(seed, "noise:" + site_id);
  fed::SiteWorker worker(std::move(data), config);

  fed::ChannelPtr channel = fed::tcp_connect(fed::parse_endpoint(connect));
  auto transcript = std::make_shared<fed::RecordingChannel::Transcript>();
  auto transcript_mu = std::make_shared<std::mutex>();
  if (!transcript_path.empty()) {
    channel = std::make_shared<fed::RecordingChannel>(channel, transcript, transcript_mu);
  }
  fed::ChannelPtr compensator;
  if (!mask_connect.empty()) {
    compensator = fed::tcp_connect(fed::parse_endpoint(mask_connect));
  }

  bool complete = false;
  try {
    complete = worker.run(*channel, compensator.get());
  } catch (...) {
    if (!transcript_path.empty()) write_transcript(transcript_path, *transcript);
    throw;
  }
  if (!transcript_path.empty()) write_transcript(transcript_path, *transcript);
  if (!results_out.empty()) io::write_results(worker.results(), results_out);
  if (!complete) {
    FEDGLMM_WARN("site %s: scan did not complete", site_id.c_str());
    return 1;
  }
  FEDGLMM_INFO("site %s: scan complete, %zu result(s)", site_id.c_str(),
               worker.results().size());
  return 0;
}

// ---- serve-coordinator ------------------------------------------------

struct CoordinatorCli {
  std::vector<std::string> site_dirs;  // in-process mode when non-empty
  std::string listen = "127.0.0.1:0";
  int expected_sites = 0;
  std::string mask_listen = "127.0.0.1:0";
  std::string port_file;
  std::string snps_csv;
  std::string snp_file;
  std::string out;
  std::string transcript_dir;
  int covariate_count = -1;
  bool mask = false;
  double noise_sd = 1.0;
  int batch = 64;
  bool quorum_restart = false;
  long noise_timeout_ms = 10000;
  FitCliOptions fit;
  double missing_cap = io::kDefaultMissingCap;
  std::uint64_t seed = 0;
};

int cmd_serve_coordinator(const CoordinatorCli& cli) {
  fed::CoordinatorConfig config;
  config.fit = cli.fit.to_fit();
  config.batch = cli.batch;
  config.masking.enabled = cli.mask;
  config.masking.noise_sd = cli.noise_sd;
  config.token = auth_token();
  config.allow_quorum_restart = cli.quorum_restart;
  config.noise_timeout = std::chrono::milliseconds(cli.noise_timeout_ms);

  std::shared_ptr<fed::NoisePool> pool;
  std::optional<fed::CompensatorServer> compensator;
  if (cli.mask) {
    pool = std::make_shared<fed::NoisePool>();
    compensator.emplace(pool);
  }

  io::ResultsTable results;
  if (!cli.site_dirs.empty()) {
    // In-process mode: every site runs as a worker thread of this process.
    std::vector<SiteDataset> datasets;
    datasets.reserve(cli.site_dirs.size());
    for (const std::string& dir : cli.site_dirs) {
      datasets.push_back(load_site_dir(dir, cli.missing_cap));
    }
    config.p = static_cast<int>(datasets.front().covariates.values.rows());
    config.snp_ids =
        resolve_snps(cli.snps_csv, cli.snp_file, datasets.front().genotypes.variant_ids);

    std::vector<fed::ChannelPtr> coordinator_ends;
    std::vector<std::thread> workers;
    std::vector<std::shared_ptr<fed::RecordingChannel::Transcript>> transcripts;
    std::vector<std::string> transcript_names;
    std::atomic<int> site_failures{0};
    for (SiteDataset& data : datasets) {
      const std::string site_id = data.site_id;
      auto [coord_end, site_end] = fed::make_inprocess_pair();
      coordinator_ends.push_back(coord_end);
      if (!cli.transcript_dir.empty()) {
        auto transcript = std::make_shared<fed::RecordingChannel::Transcript>();
        auto mu = std::make_shared<std::mutex>();
        site_end = std::make_shared<fed::RecordingChannel>(site_end, transcript, mu);
        transcripts.push_back(transcript);
        transcript_names.push_back(site_id + ".transcript");
      }
      fed::ChannelPtr site_comp;
      if (cli.mask) {
        auto [comp_site_end, comp_server_end] = fed::make_inprocess_pair();
        site_comp = comp_site_end;
        compensator->attach(comp_server_end);
      }
      fed::SiteWorkerConfig wconfig;
      wconfig.token = config.token;
      wconfig.noise_seed = sim::derive_seed(cli.seed, "noise:" + site_id);
      workers.emplace_back([data = std::move(data), wconfig, site_end, site_comp, site_id,
                            &site_failures]() mutable {
        try {
          fed::SiteWorker worker(std::move(data), wconfig);
          worker.run(*site_end, site_comp.get());
        } catch (const std::exception& e) {
          FEDGLMM_WARN("site %s worker stopped: %s", site_id.c_str(), e.what());
          site_failures.fetch_add(1);
        }
        if (site_comp) site_comp->close();
        site_end->close();
      });
    }

    try {
      fed::Coordinator coordinator(config, coordinator_ends, pool);
      results = coordinator.run();
    } catch (...) {
      for (const fed::ChannelPtr& ch : coordinator_ends) ch->close();
      for (std::thread& t : workers) t.join();
      if (compensator) compensator->stop();
      throw;
    }
    for (std::thread& t : workers) t.join();
    if (compensator) compensator->stop();
    for (size_t i = 0; i < transcripts.size(); ++i) {
      write_transcript((fs::path(cli.transcript_dir) / transcript_names[i]).string(),
                       *transcripts[i]);
    }
  } else {
    // TCP mode: accept the announced number of site connections.
    if (cli.expected_sites < 1) {
      throw ConfigError("TCP mode needs --sites (or pass --site-dir for in-process mode)");
    }
    if (!cli.transcript_dir.empty()) {
      throw ConfigError("--transcript-dir applies to in-process mode; use serve-site "
                        "--transcript for TCP runs");
    }
    if (cli.covariate_count < 0) {
      throw ConfigError("TCP mode needs --covariate-count (the sites hold the data)");
    }
    config.p = cli.covariate_count;
    config.snp_ids = resolve_snps(cli.snps_csv, cli.snp_file, {});
    if (config.snp_ids.empty()) throw ConfigError("TCP mode needs --snps or --snp-file");

    fed::TcpListener listener(fed::parse_endpoint(cli.listen));
    std::optional<fed::TcpListener> mask_listener;
    if (cli.mask) mask_listener.emplace(fed::parse_endpoint(cli.mask_listen));
    if (!cli.port_file.empty()) {
      json ports;
      ports["coordinator"] = listener.local_port();
      if (mask_listener) ports["compensator"] = mask_listener->local_port();
      write_file(cli.port_file, ports.dump() + "\n");
    }
    FEDGLMM_INFO("listening on port %u for %d site(s)%s", listener.local_port(),
                 cli.expected_sites, cli.mask ? " (masking on)" : "");

    std::vector<fed::ChannelPtr> channels;
    channels.reserve(static_cast<size_t>(cli.expected_sites));
    for (int i = 0; i < cli.expected_sites; ++i) channels.push_back(listener.accept());
    if (mask_listener) {
      for (int i = 0; i < cli.expected_sites; ++i) {
        compensator->attach(mask_listener->accept());
      }
    }
    try {
      fed::Coordinator coordinator(config, channels, pool);
      results = coordinator.run();
    } catch (...) {
      if (compensator) compensator->stop();
      throw;
    }
    if (compensator) compensator->stop();
  }

  io::write_results(results, cli.out);
  FEDGLMM_INFO("scan results written to %s", cli.out.c_str());
  return 0;
}

}  // namespace
}  // namespace fedglmm

int main(int argc, char** argv) {
  using namespace fedglmm;

  CLI::App app{"federated logistic mixed-model GWAS toolkit"};
  app.require_subcommand(1);
  std::string log_level = "info";
  bool json_logs = false;
  std::uint64_t seed = 0;
  app.add_option("--log-level", log_level, "trace, debug, info, warn or error")
      ->capture_default_str();
  app.add_flag("--json-logs", json_logs, "one JSON object per log line");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed, "master seed for derived random streams")
          ->capture_default_str();

  // pca-ref
  auto* pca_ref = app.add_subcommand("pca-ref", "compute PC loadings from a reference panel");
  pca_ref->fallthrough();
  std::string pr_panel, pr_out;
  int pr_components = 6;
  pca_ref->add_option("--panel", pr_panel, "reference genotype TSV (no missing calls)")
      ->required();
  pca_ref->add_option("--components", pr_components, "number of components")
      ->capture_default_str();
  pca_ref->add_option("--out", pr_out, "loadings output file")->required();

  // project
  auto* project = app.add_subcommand("project", "project study genotypes onto panel loadings");
  project->fallthrough();
  std::string pj_genotypes, pj_loadings, pj_out;
  double pj_cap = io::kDefaultMissingCap;
  project->add_option("--genotypes", pj_genotypes, "study genotype TSV or plink .raw")
      ->required();
  project->add_option("--loadings", pj_loadings, "loadings from pca-ref")->required();
  project->add_option("--out", pj_out, "covariate output file")->required();
  project->add_option("--missing-cap", pj_cap, "max missing fraction per variant")
      ->capture_default_str();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic GWAS study");
  simulate->fallthrough();
  std::string sm_spec, sm_out_dir;
  bool sm_mismatched = false;
  long sm_reference = 400;
  simulate->add_option("--spec", sm_spec, "simulation spec JSON")->required();
  simulate->add_option("--out-dir", sm_out_dir, "output directory")->required();
  simulate->add_flag("--mismatched-reference", sm_mismatched,
                     "draw the reference panel from sister populations");
  simulate->add_option("--reference-size", sm_reference, "panel sample count")
      ->capture_default_str();

  // partition
  auto* partition = app.add_subcommand("partition", "split a study into k sites with k-means");
  partition->fallthrough();
  std::string pt_genotypes, pt_phenotype, pt_covariates, pt_out_dir;
  int pt_sites = 3;
  bool pt_on_genotypes = false;
  double pt_cap = io::kDefaultMissingCap;
  partition->add_option("--genotypes", pt_genotypes, "study genotype file")->required();
  partition->add_option("--phenotype", pt_phenotype, "phenotype file")->required();
  partition->add_option("--covariates", pt_covariates,
                        "covariate file (clustering features by default)");
  partition->add_option("--sites", pt_sites, "number of sites")->capture_default_str();
  partition->add_option("--out-dir", pt_out_dir, "output directory")->required();
  partition->add_flag("--on-genotypes", pt_on_genotypes, "cluster on raw dosages instead");
  partition->add_option("--missing-cap", pt_cap, "max missing fraction per variant")
      ->capture_default_str();

  // fit-pooled
  auto* pooled = app.add_subcommand("fit-pooled", "centralized mixed-model scan (oracle)");
  pooled->fallthrough();
  std::vector<std::string> fp_site_dirs;
  std::string fp_snps, fp_snp_file, fp_out;
  double fp_cap = io::kDefaultMissingCap;
  FitCliOptions fp_fit;
  pooled->add_option("--site-dir", fp_site_dirs, "site data directory (repeatable)")
      ->required()
      ->expected(-1);
  pooled->add_option("--snps", fp_snps, "comma-separated snp ids (default: every variant)");
  pooled->add_option("--snp-file", fp_snp_file, "file with one snp id per line");
  pooled->add_option("--out", fp_out, "results output file")->required();
  pooled->add_option("--missing-cap", fp_cap, "max missing fraction per variant")
      ->capture_default_str();
  add_fit_options(pooled, fp_fit);

  // scan-linear
  auto* linear = app.add_subcommand("scan-linear", "OLS association scan, quantitative traits");
  linear->fallthrough();
  std::string sl_genotypes, sl_phenotype, sl_covariates, sl_out;
  double sl_cap = io::kDefaultMissingCap;
  linear->add_option("--genotypes", sl_genotypes, "study genotype file")->required();
  linear->add_option("--phenotype", sl_phenotype, "phenotype file")->required();
  linear->add_option("--covariates", sl_covariates, "covariate file (optional)");
  linear->add_option("--out", sl_out, "results output file")->required();
  linear->add_option("--missing-cap", sl_cap, "max missing fraction per variant")
      ->capture_default_str();

  // experiment-projection
  auto* experiment =
      app.add_subcommand("experiment-projection", "stratification concordance benchmark");
  experiment->fallthrough();
  std::string ex_spec, ex_out, ex_summary;
  int ex_studies = 20, ex_components = 6, ex_threads = 1;
  bool ex_mismatched = false;
  experiment->add_option("--spec", ex_spec, "simulation spec JSON")->required();
  experiment->add_option("--studies", ex_studies, "number of simulated studies")
      ->capture_default_str();
  experiment->add_option("--components", ex_components, "PCs per covariate set")
      ->capture_default_str();
  experiment->add_flag("--mismatched-reference", ex_mismatched,
                       "use sister-population reference panels");
  experiment->add_option("--threads", ex_threads, "parallel study workers")
      ->capture_default_str();
  experiment->add_option("--out", ex_out, "long-format TSV output")->required();
  experiment->add_option("--summary", ex_summary, "summary JSON output (optional)");

  // serve-site
  auto* site = app.add_subcommand("serve-site", "run one data-holding site");
  site->fallthrough();
  std::string ss_dir, ss_connect, ss_mask_connect, ss_transcript, ss_results;
  std::uint64_t ss_noise_seed = 0;
  double ss_cap = io::kDefaultMissingCap;
  site->add_option("--site-dir", ss_dir, "site data directory")->required();
  site->add_option("--connect", ss_connect, "coordinator host:port")->required();
  site->add_option("--mask-connect", ss_mask_connect, "compensator host:port (masking)");
  site->add_option("--transcript", ss_transcript, "write the coordinator dialogue here");
  CLI::Option* ss_noise_opt =
      site->add_option("--noise-seed", ss_noise_seed, "seed for the masking noise stream");
  site->add_option("--results", ss_results, "write the finalized rows this site saw");
  site->add_option("--missing-cap", ss_cap, "max missing fraction per variant")
      ->capture_default_str();

  // serve-coordinator
  auto* coord = app.add_subcommand("serve-coordinator", "run the aggregation coordinator");
  coord->fallthrough();
  CoordinatorCli cc;
  coord->add_option("--site-dir", cc.site_dirs,
                    "site data directory (repeatable; selects in-process mode)");
  coord->add_option("--listen", cc.listen, "bind address for sites, host:port (TCP mode)")
      ->capture_default_str();
  coord->add_option("--sites", cc.expected_sites, "number of site connections to accept");
  coord->add_option("--mask-listen", cc.mask_listen, "bind address for the compensator")
      ->capture_default_str();
  coord->add_option("--port-file", cc.port_file, "write the bound ports as JSON");
  coord->add_option("--snps", cc.snps_csv, "comma-separated snp ids");
  coord->add_option("--snp-file", cc.snp_file, "file with one snp id per line");
  coord->add_option("--covariate-count", cc.covariate_count,
                    "covariates every site must hold (TCP mode)");
  coord->add_option("--out", cc.out, "results output file")->required();
  coord->add_option("--transcript-dir", cc.transcript_dir,
                    "per-site dialogue transcripts (in-process mode)");
  coord->add_flag("--mask", cc.mask, "additive noise masking with compensator unmasking");
  coord->add_option("--noise-sd", cc.noise_sd, "masking noise standard deviation")
      ->capture_default_str();
  coord->add_option("--batch", cc.batch, "snps fitted per round batch")->capture_default_str();
  coord->add_flag("--quorum-restart", cc.quorum_restart,
                  "after a site failure, restart the batch with the survivors");
  coord->add_option("--noise-timeout-ms", cc.noise_timeout_ms,
                    "compensator completeness timeout")
      ->capture_default_str();
  coord->add_option("--missing-cap", cc.missing_cap, "max missing fraction per variant")
      ->capture_default_str();
  add_fit_options(coord, cc.fit);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  log::set_json(json_logs);
  try {
    log::set_level(log::parse_level(log_level));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    if (*pca_ref) return cmd_pca_ref(pr_panel, pr_components, pr_out);
    if (*project) return cmd_project(pj_genotypes, pj_loadings, pj_out, pj_cap);
    if (*simulate) {
      return cmd_simulate(sm_spec, sm_out_dir, sm_mismatched, sm_reference,
                          seed_opt->count() > 0, seed);
    }
    if (*partition) {
      return cmd_partition(pt_genotypes, pt_phenotype, pt_covariates, pt_sites, seed,
                           pt_out_dir, pt_on_genotypes, pt_cap);
    }
    if (*pooled) return cmd_fit_pooled(fp_site_dirs, fp_snps, fp_snp_file, fp_fit, fp_out, fp_cap);
    if (*linear) return cmd_scan_linear(sl_genotypes, sl_phenotype, sl_covariates, sl_out, sl_cap);
    if (*experiment) {
      return cmd_experiment(ex_spec, ex_studies, ex_components, ex_mismatched, ex_threads,
                            seed_opt->count() > 0, seed, ex_out, ex_summary);
    }
    if (*site) {
      return cmd_serve_site(ss_dir, ss_connect, ss_mask_connect, ss_transcript,
                            ss_noise_opt->count() > 0, ss_noise_seed, seed, ss_results, ss_cap);
    }
    if (*coord) {
      cc.seed = seed;
      return cmd_serve_coordinator(cc);
    }
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 1;
  } catch (const ProtocolError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  } catch (const fedglmm::Error& e) {
    // Bad arguments, unreadable files, malformed inputs: the user's to fix.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
