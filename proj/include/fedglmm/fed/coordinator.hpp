#pragma once

// Coordinator side of the protocol: handshake, per-batch round loop,
// aggregation (with optional unmasking through the compensator), and
// result assembly. Sites are addressed in ascending site-id order
// everywhere, which pins the floating-point summation order and makes runs
// reproducible.

#include <chrono>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedglmm/data_io.hpp"
#include "fedglmm/fed/channel.hpp"
#include "fedglmm/fed/masking.hpp"
#include "fedglmm/fed/message.hpp"
#include "fedglmm/glmm.hpp"

namespace fedglmm::fed {

struct CoordinatorConfig {
  std::vector<std::string> snp_ids;  // scan list; results keep this order
  int p = 0;                         // covariate count every site must hold
  glmm::FitOptions fit;
  int batch = 64;
  MaskingConfig masking;
  std::string token;
  // On a site failure: true re-initializes the interrupted batch with the
  // surviving sites; false aborts the scan (default).
  bool allow_quorum_restart = false;
  std::chrono::milliseconds noise_timeout{10000};
};

class Coordinator {
 public:
  // `pool` must be non-null when masking is enabled; the site channels must
  // already be connected (handshake happens in run()).
  Coordinator(CoordinatorConfig config, std::vector<ChannelPtr> site_channels,
              std::shared_ptr<NoisePool> pool);

  // Runs the whole scan and returns one row per requested SNP, in request
  // order. Sites are left cleanly shut down on both success and failure.
  io::ResultsTable run();

  // Site ids in aggregation order; valid once the handshake finished.
  const std::vector<std::string>& site_ids() const { return site_ids_; }

  // Full per-SNP fit states (traces included when fit.record_trace is on),
  // parallel to the result table; valid once run() returned.
  const std::vector<glmm::FitResult>& fit_results() const { return fits_; }

 private:
  struct Site {
    ChannelPtr channel;
    std::string site_id;
    long n_i = 0;
  };

  void handshake();
  void broadcast(const std::string& line);
  void run_batch(const std::vector<std::string>& snps);
  // After a mid-batch failure: a barrier round that discards stale replies,
  // drops unresponsive sites, and rebuilds the aggregation order.
  void prune_and_resync();
  void shutdown_sites(bool complete);
  void rebuild_site_ids();
  io::ResultRow row_from(const glmm::FitResult& fit) const;

  CoordinatorConfig config_;
  std::vector<ChannelPtr> pending_channels_;
  std::shared_ptr<NoisePool> pool_;
  std::vector<Site> sites_;
  std::vector<std::string> site_ids_;
  int round_cursor_ = 0;             // monotone across batches and restarts
  std::vector<io::ResultRow> rows_;  // parallel to config_.snp_ids
  std::vector<glmm::FitResult> fits_;
  std::unordered_map<std::string, size_t> row_index_;
};

}  // namespace fedglmm::fed
