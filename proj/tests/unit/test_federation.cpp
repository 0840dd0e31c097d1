#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "fedglmm/errors.hpp"
#include "fedglmm/fed/channel.hpp"
#include "fedglmm/fed/coordinator.hpp"
#include "fedglmm/fed/masking.hpp"
#include "fedglmm/fed/message.hpp"
#include "fedglmm/fed/site.hpp"
#include "fedglmm/glmm.hpp"
#include "fedglmm/report.hpp"
#include "fedglmm/types.hpp"

using namespace fedglmm;
using namespace fedglmm::fed;

namespace {

std::vector<std::string> variant_names(int n) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) ids.push_back("rs_" + std::to_string(v));
  return ids;
}

// A small site with binomial dosages, two covariates, and a logistic
// phenotype whose intercept shift differs per site so sigma2 stays away
// from its floor.
SiteDataset make_dataset(const std::string& site_id, int n, int n_variants, double shift,
                         unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss;

  SiteDataset ds;
  ds.site_id = site_id;
  ds.genotypes.variant_ids = variant_names(n_variants);
  ds.genotypes.sample_ids.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ds.genotypes.sample_ids.push_back(site_id + "_" + std::to_string(i));
  ds.genotypes.dosages.resize(n_variants, n);
  for (int v = 0; v < n_variants; ++v) {
    const double af = 0.2 + 0.6 * unif(rng);
    std::binomial_distribution<int> dose(2, af);
    for (int i = 0; i < n; ++i) ds.genotypes.dosages(v, i) = static_cast<double>(dose(rng));
  }
  ds.covariates.sample_ids = ds.genotypes.sample_ids;
  ds.covariates.values.resize(2, n);
  for (int i = 0; i < n; ++i) {
    ds.covariates.values(0, i) = gauss(rng);
    ds.covariates.values(1, i) = gauss(rng);
  }
  ds.phenotype.resize(n);
  for (int i = 0; i < n; ++i) {
    const double eta = shift + 0.35 * ds.genotypes.dosages(0, i) -
                       0.5 * ds.covariates.values(0, i) + 0.25 * ds.covariates.values(1, i);
    ds.phenotype(i) = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return ds;
}

std::vector<SiteDataset> three_sites(int n_variants) {
  return {make_dataset("site_a", 60, n_variants, -0.6, 101),
          make_dataset("site_b", 75, n_variants, 0.1, 202),
          make_dataset("site_c", 50, n_variants, 0.7, 303)};
}

// Reference fit over a subset of the datasets, summed in dataset order.
// The coordinator aggregates in ascending site-id order, so passing the
// datasets already sorted reproduces its summation sequence exactly.
glmm::FitResult pooled_fit(const std::vector<SiteDataset>& datasets, const std::string& snp,
                           Eigen::Index variant_index, const glmm::FitOptions& options) {
  std::vector<glmm::SiteData> sites;
  sites.reserve(datasets.size());
  for (const SiteDataset& ds : datasets) sites.push_back(glmm::make_site_data(ds, variant_index));
  for (glmm::SiteData& s : sites) s.snp_id = snp;
  glmm::FitResult fit = glmm::fit_pooled(sites, options);
  return fit;
}

// Runs one SiteWorker on its own thread and captures how it ended.
struct WorkerThread {
  std::unique_ptr<SiteWorker> worker;
  std::thread thread;
  std::optional<bool> finished_complete;
  std::string error;

  WorkerThread(SiteDataset ds, SiteWorkerConfig config, ChannelPtr coordinator,
               ChannelPtr compensator = nullptr)
      : worker(std::make_unique<SiteWorker>(std::move(ds), std::move(config))) {
    thread = std::thread([this, coordinator, compensator] {
      try {
        finished_complete = worker->run(*coordinator, compensator.get());
      } catch (const std::exception& e) {
        error = e.what();
      }
    });
  }

  void join() {
    if (thread.joinable()) thread.join();
  }
  ~WorkerThread() { join(); }
};

bool rows_identical(const io::ResultRow& a, const io::ResultRow& b) {
  return a.snp_id == b.snp_id && a.has_stats == b.has_stats && a.beta == b.beta && a.se == b.se &&
         a.z == b.z && a.p_value == b.p_value && a.n_iterations == b.n_iterations &&
         a.converged == b.converged && a.sigma2 == b.sigma2 && a.note == b.note;
}

}  // namespace

TEST_CASE("federated scan reproduces the pooled fit bit for bit") {
  const int n_variants = 6;
  std::vector<SiteDataset> datasets = three_sites(n_variants);
  const std::vector<std::string> snps = variant_names(n_variants);

  CoordinatorConfig config;
  config.snp_ids = snps;
  config.p = 2;
  config.token = "round-trip";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  // Connection order deliberately scrambled; the handshake sorts by site id.
  for (int k : {2, 0, 1}) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    workers.push_back(std::make_unique<WorkerThread>(
        datasets[static_cast<std::size_t>(k)], SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  const io::ResultsTable table = coordinator.run();
  for (auto& w : workers) w->join();

  CHECK(coordinator.site_ids() == std::vector<std::string>{"site_a", "site_b", "site_c"});
  REQUIRE(table.size() == snps.size());
  REQUIRE(coordinator.fit_results().size() == snps.size());

  for (std::size_t i = 0; i < snps.size(); ++i) {
    CAPTURE(snps[i]);
    const glmm::FitResult expected =
        pooled_fit(datasets, snps[i], static_cast<Eigen::Index>(i), config.fit);
    const glmm::FitResult& got = coordinator.fit_results()[i];

    REQUIRE(got.converged);
    REQUIRE(expected.converged);
    // Same state machine, same site-ordered sums: the whole trajectory is
    // identical, not merely close.
    CHECK(got.beta == expected.beta);
    CHECK(got.sigma2 == expected.sigma2);
    CHECK(got.n_iterations == expected.n_iterations);
    REQUIRE(got.beta_trace.size() == expected.beta_trace.size());
    for (std::size_t t = 0; t < got.beta_trace.size(); ++t) {
      CHECK(got.beta_trace[t] == expected.beta_trace[t]);
    }
    REQUIRE(got.loglik_trace.size() == expected.loglik_trace.size());
    for (std::size_t t = 0; t < got.loglik_trace.size(); ++t) {
      CHECK(got.loglik_trace[t] == expected.loglik_trace[t]);
    }
    CHECK(rows_identical(table[i], result_row_from_fit(expected)));
  }

  // Every worker saw a complete shutdown and holds the same final table.
  for (auto& w : workers) {
    REQUIRE(w->finished_complete.has_value());
    CHECK(*w->finished_complete);
    REQUIRE(w->worker->results().size() == table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      CHECK(rows_identical(w->worker->results()[i], table[i]));
    }
  }
}

TEST_CASE("two identical runs exchange identical bytes") {
  const int n_variants = 3;
  const std::vector<std::string> snps = variant_names(n_variants);

  auto run_once = [&](std::vector<RecordingChannel::Transcript>& transcripts) {
    std::vector<SiteDataset> datasets = three_sites(n_variants);
    CoordinatorConfig config;
    config.snp_ids = snps;
    config.p = 2;
    config.token = "replay";

    std::vector<ChannelPtr> coordinator_ends;
    std::vector<std::shared_ptr<RecordingChannel::Transcript>> recorded;
    std::vector<std::unique_ptr<WorkerThread>> workers;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
      auto [coord_end, site_end] = make_inprocess_pair();
      auto transcript = std::make_shared<RecordingChannel::Transcript>();
      recorded.push_back(transcript);
      coordinator_ends.push_back(std::make_shared<RecordingChannel>(
          coord_end, transcript, std::make_shared<std::mutex>()));
      workers.push_back(std::make_unique<WorkerThread>(
          datasets[k], SiteWorkerConfig{config.token, 0}, site_end));
    }

    Coordinator coordinator(config, coordinator_ends, nullptr);
    const io::ResultsTable table = coordinator.run();
    for (auto& w : workers) w->join();
    transcripts.clear();
    for (const auto& t : recorded) transcripts.push_back(*t);
    return table;
  };

  std::vector<RecordingChannel::Transcript> first_transcripts;
  std::vector<RecordingChannel::Transcript> second_transcripts;
  const io::ResultsTable first = run_once(first_transcripts);
  const io::ResultsTable second = run_once(second_transcripts);

  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(rows_identical(first[i], second[i]));

  REQUIRE(first_transcripts.size() == second_transcripts.size());
  for (std::size_t k = 0; k < first_transcripts.size(); ++k) {
    REQUIRE(first_transcripts[k].size() == second_transcripts[k].size());
    CHECK(first_transcripts[k].size() > 0);
    for (std::size_t j = 0; j < first_transcripts[k].size(); ++j) {
      CHECK(first_transcripts[k][j].outgoing == second_transcripts[k][j].outgoing);
      CHECK(first_transcripts[k][j].line == second_transcripts[k][j].line);
    }
  }
}

TEST_CASE("handshake rejects a bad auth token") {
  std::vector<SiteDataset> datasets = three_sites(2);
  CoordinatorConfig config;
  config.snp_ids = variant_names(2);
  config.p = 2;
  config.token = "sesame";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    // site_b presents the wrong token; the others are honest.
    const std::string token = datasets[k].site_id == "site_b" ? "letmein" : config.token;
    workers.push_back(
        std::make_unique<WorkerThread>(datasets[k], SiteWorkerConfig{token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(), doctest::Contains("bad auth token"), ConfigError);

  // The coordinator gave up during the handshake; release the sites so the
  // threads can observe the close and finish. Sites accepted before the bad
  // one saw an incomplete shutdown; the rest see the channel close.
  for (const ChannelPtr& ch : coordinator_ends) ch->close();
  for (auto& w : workers) {
    w->join();
    CHECK((!w->finished_complete.has_value() || !*w->finished_complete));
    CHECK(w->worker->results().empty());
  }
}

TEST_CASE("handshake reports a covariate width mismatch") {
  std::vector<SiteDataset> datasets = three_sites(2);
  // site_c lost a covariate column.
  for (SiteDataset& ds : datasets) {
    if (ds.site_id == "site_c") {
      ds.covariates.values.conservativeResize(1, ds.covariates.values.cols());
    }
  }

  CoordinatorConfig config;
  config.snp_ids = variant_names(2);
  config.p = 2;
  config.token = "t";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    workers.push_back(
        std::make_unique<WorkerThread>(datasets[k], SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(),
                       doctest::Contains("rejected the handshake"), ConfigError);

  for (const ChannelPtr& ch : coordinator_ends) ch->close();
  for (auto& w : workers) {
    w->join();
    CHECK((!w->finished_complete.has_value() || !*w->finished_complete));
  }
  // The mismatched site diagnosed itself in its own error message.
  CHECK(workers[2]->error.find("covariate count mismatch") != std::string::npos);
  CHECK(workers[2]->error.find("site_c") != std::string::npos);
}

TEST_CASE("handshake refuses a site that lacks a scanned snp") {
  std::vector<SiteDataset> datasets = three_sites(3);
  CoordinatorConfig config;
  config.snp_ids = variant_names(3);
  config.snp_ids.push_back("rs_unseen");
  config.p = 2;
  config.token = "t";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    workers.push_back(
        std::make_unique<WorkerThread>(datasets[k], SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(), doctest::Contains("rs_unseen"), ConfigError);
  for (const ChannelPtr& ch : coordinator_ends) ch->close();
  for (auto& w : workers) {
    w->join();
    // Every site noticed the gap on its own.
    CHECK(w->error.find("not present at this site") != std::string::npos);
  }
}

TEST_CASE("handshake refuses diverging variant lists") {
  std::vector<SiteDataset> datasets = three_sites(3);
  for (SiteDataset& ds : datasets) {
    if (ds.site_id == "site_b") {
      // Same count, different name at position 2.
      ds.genotypes.variant_ids[2] = "rs_rogue";
    }
  }

  CoordinatorConfig config;
  config.snp_ids = {"rs_0", "rs_1"};  // the rogue variant is not even scanned
  config.p = 2;
  config.token = "t";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    workers.push_back(
        std::make_unique<WorkerThread>(datasets[k], SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(),
                       doctest::Contains("variant lists disagree"), AlignmentError);
  for (const ChannelPtr& ch : coordinator_ends) ch->close();
  for (auto& w : workers) w->join();
}

TEST_CASE("handshake refuses duplicate site ids") {
  SiteDataset a = make_dataset("site_twin", 40, 2, 0.0, 11);
  SiteDataset b = make_dataset("site_twin", 40, 2, 0.0, 12);

  CoordinatorConfig config;
  config.snp_ids = variant_names(2);
  config.p = 2;
  config.token = "t";

  auto [ca, sa] = make_inprocess_pair();
  auto [cb, sb] = make_inprocess_pair();
  WorkerThread wa(a, SiteWorkerConfig{config.token, 0}, sa);
  WorkerThread wb(b, SiteWorkerConfig{config.token, 0}, sb);

  Coordinator coordinator(config, {ca, cb}, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(), doctest::Contains("site_twin"), ConfigError);
  ca->close();
  cb->close();
}

namespace {

// A scripted site that answers the handshake honestly, receives the first
// batch request, and then vanishes. The coordinator only learns of the loss
// when the channel reports closed.
std::thread scripted_flaky_site(ChannelPtr channel, std::string site_id, std::string token,
                                std::vector<std::string> variant_ids) {
  return std::thread([channel = std::move(channel), site_id = std::move(site_id),
                      token = std::move(token), variant_ids = std::move(variant_ids)] {
    const std::optional<std::string> init_line = channel->recv_line();
    if (!init_line) return;
    const InitMessage init = expect_message<InitMessage>(*init_line);
    InitAckMessage ack;
    ack.site_id = site_id;
    ack.token = token;
    ack.n_i = 30;
    ack.covariate_count = init.p;
    ack.variant_ids = variant_ids;
    channel->send_line(serialize(ack));
    channel->recv_line();  // first GLOBAL_UPDATE arrives, then the site dies
    channel->close();
  });
}

}  // namespace

TEST_CASE("a mid-scan site loss aborts by default") {
  std::vector<SiteDataset> datasets = three_sites(3);
  CoordinatorConfig config;
  config.snp_ids = variant_names(3);
  config.p = 2;
  config.token = "t";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  std::thread flaky;
  for (const SiteDataset& ds : datasets) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    if (ds.site_id == "site_b") {
      flaky = scripted_flaky_site(site_end, ds.site_id, config.token, ds.genotypes.variant_ids);
    } else {
      workers.push_back(
          std::make_unique<WorkerThread>(ds, SiteWorkerConfig{config.token, 0}, site_end));
    }
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  CHECK_THROWS_WITH_AS(coordinator.run(), doctest::Contains("site_b"), TransportError);
  flaky.join();

  // A survivor either sees the incomplete-shutdown notice or, if it was
  // still computing when the coordinator tore the channels down, loses the
  // connection. Both shapes end with no retained results.
  for (auto& w : workers) {
    w->join();
    CAPTURE(w->error);
    if (w->finished_complete.has_value()) {
      CHECK_FALSE(*w->finished_complete);
    } else {
      CHECK(!w->error.empty());
    }
    CHECK(w->worker->results().empty());
  }
}

TEST_CASE("quorum restart finishes the scan with the survivors") {
  std::vector<SiteDataset> datasets = three_sites(4);
  const std::vector<std::string> snps = variant_names(4);

  CoordinatorConfig config;
  config.snp_ids = snps;
  config.p = 2;
  config.token = "t";
  config.allow_quorum_restart = true;

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  std::thread flaky;
  for (const SiteDataset& ds : datasets) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    if (ds.site_id == "site_b") {
      flaky = scripted_flaky_site(site_end, ds.site_id, config.token, ds.genotypes.variant_ids);
    } else {
      workers.push_back(
          std::make_unique<WorkerThread>(ds, SiteWorkerConfig{config.token, 0}, site_end));
    }
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  const io::ResultsTable table = coordinator.run();
  flaky.join();
  for (auto& w : workers) w->join();

  // site_b fell out before contributing any finished snp, so every row is a
  // fresh two-site fit.
  CHECK(coordinator.site_ids() == std::vector<std::string>{"site_a", "site_c"});
  std::vector<SiteDataset> survivors;
  for (const SiteDataset& ds : datasets) {
    if (ds.site_id != "site_b") survivors.push_back(ds);
  }
  REQUIRE(table.size() == snps.size());
  for (std::size_t i = 0; i < snps.size(); ++i) {
    CAPTURE(snps[i]);
    const glmm::FitResult expected =
        pooled_fit(survivors, snps[i], static_cast<Eigen::Index>(i), config.fit);
    CHECK(coordinator.fit_results()[i].beta == expected.beta);
    CHECK(coordinator.fit_results()[i].sigma2 == expected.sigma2);
    CHECK(rows_identical(table[i], result_row_from_fit(expected)));
  }
  for (auto& w : workers) {
    REQUIRE(w->finished_complete.has_value());
    CHECK(*w->finished_complete);
    CHECK(w->worker->results().size() == snps.size());
  }
}

TEST_CASE("an empty scan list produces an empty table and no rounds") {
  std::vector<SiteDataset> datasets = three_sites(2);
  CoordinatorConfig config;
  config.snp_ids = {};
  config.p = 2;
  config.token = "t";

  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::shared_ptr<CountingChannel>> counters;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (const SiteDataset& ds : datasets) {
    auto [coord_end, site_end] = make_inprocess_pair();
    auto counter = std::make_shared<CountingChannel>(coord_end);
    counters.push_back(counter);
    coordinator_ends.push_back(counter);
    workers.push_back(
        std::make_unique<WorkerThread>(ds, SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, nullptr);
  const io::ResultsTable table = coordinator.run();
  for (auto& w : workers) w->join();

  CHECK(table.empty());
  for (const auto& counter : counters) {
    const CountingChannel::Counts sent = counter->sent();
    const CountingChannel::Counts received = counter->received();
    for (const auto& [key, count] : sent) {
      CHECK(key.first != "GLOBAL_UPDATE");
    }
    for (const auto& [key, count] : received) {
      CHECK(key.first != "LOCAL_STATS");
    }
    CHECK(sent.at({"INIT", ""}) == 1);
    CHECK(sent.at({"SHUTDOWN", ""}) == 1);
  }
  for (auto& w : workers) {
    REQUIRE(w->finished_complete.has_value());
    CHECK(*w->finished_complete);
    CHECK(w->worker->results().empty());
  }
}

TEST_CASE("a masked scan reproduces the unmasked coefficients") {
  const int n_variants = 4;
  const std::vector<std::string> snps = variant_names(n_variants);

  auto run_scan = [&](bool masked) {
    std::vector<SiteDataset> datasets = three_sites(n_variants);
    CoordinatorConfig config;
    config.snp_ids = snps;
    config.p = 2;
    config.token = "seal";
    config.masking.enabled = masked;
    config.masking.noise_sd = 25.0;

    std::shared_ptr<NoisePool> pool;
    std::unique_ptr<CompensatorServer> server;
    if (masked) {
      pool = std::make_shared<NoisePool>();
      server = std::make_unique<CompensatorServer>(pool);
    }

    std::vector<ChannelPtr> coordinator_ends;
    std::vector<std::unique_ptr<WorkerThread>> workers;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
      auto [coord_end, site_end] = make_inprocess_pair();
      coordinator_ends.push_back(coord_end);
      ChannelPtr comp_site_end;
      if (masked) {
        auto [comp_server_end, site_comp] = make_inprocess_pair();
        server->attach(comp_server_end);
        comp_site_end = site_comp;
      }
      workers.push_back(std::make_unique<WorkerThread>(
          datasets[k], SiteWorkerConfig{config.token, 7000 + static_cast<unsigned>(k)}, site_end,
          comp_site_end));
    }

    Coordinator coordinator(config, coordinator_ends, pool);
    io::ResultsTable table = coordinator.run();
    for (auto& w : workers) {
      w->join();
      REQUIRE(w->finished_complete.has_value());
      CHECK(*w->finished_complete);
    }
    if (server) server->stop();
    return table;
  };

  const io::ResultsTable plain = run_scan(false);
  const io::ResultsTable masked = run_scan(true);

  REQUIRE(plain.size() == masked.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CAPTURE(plain[i].snp_id);
    REQUIRE(plain[i].converged);
    REQUIRE(masked[i].converged);
    // Unmasking is exact only up to one rounding per field per site, so the
    // runs agree to well below reporting precision without being bit-equal.
    CHECK(std::fabs(masked[i].beta - plain[i].beta) <= 1e-8);
    CHECK(std::fabs(masked[i].se - plain[i].se) <= 1e-8);
    CHECK(std::fabs(masked[i].sigma2 - plain[i].sigma2) <= 1e-8);
  }
}

TEST_CASE("a masked scan needs a compensator endpoint at every site") {
  std::vector<SiteDataset> datasets = three_sites(2);
  CoordinatorConfig config;
  config.snp_ids = variant_names(2);
  config.p = 2;
  config.token = "seal";
  config.masking.enabled = true;

  auto pool = std::make_shared<NoisePool>();
  std::vector<ChannelPtr> coordinator_ends;
  std::vector<std::unique_ptr<WorkerThread>> workers;
  for (const SiteDataset& ds : datasets) {
    auto [coord_end, site_end] = make_inprocess_pair();
    coordinator_ends.push_back(coord_end);
    // No compensator channel handed to the workers.
    workers.push_back(
        std::make_unique<WorkerThread>(ds, SiteWorkerConfig{config.token, 0}, site_end));
  }

  Coordinator coordinator(config, coordinator_ends, pool);
  CHECK_THROWS_WITH_AS(coordinator.run(), doctest::Contains("compensator"), ConfigError);
  for (const ChannelPtr& ch : coordinator_ends) ch->close();
  for (auto& w : workers) w->join();
}
