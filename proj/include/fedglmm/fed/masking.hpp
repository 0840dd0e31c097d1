#pragma once

// Additive noise masking. Each site adds site-local Gaussian noise to every
// real-valued field of its per-round payload and ships the raw noise to a
// separate compensator endpoint; the coordinator can recover only the
// across-site sum (masked sum minus the compensator's noise sum) and never
// an individual site's cleartext statistics.

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fedglmm/fed/channel.hpp"
#include "fedglmm/glmm.hpp"

namespace fedglmm::fed {

struct MaskedPayload {
  glmm::StatsPayload masked;
  glmm::StatsPayload noise;
};

// Adds an independent N(0, noise_sd^2) draw to each payload field. The
// Hessian noise is drawn on the upper triangle and mirrored so the masked
// matrix stays symmetric. Field order is fixed, so a seeded rng gives a
// reproducible mask.
MaskedPayload mask_payload(const glmm::StatsPayload& payload, std::mt19937_64& rng,
                           double noise_sd);

// Round key linking a site's masked stats to its noise submission.
std::string make_noise_id(const std::string& snp_id, int round);

// The compensator's core. Collects per-site noise submissions and reveals
// only complete sums; a sum is released once every expected site has
// submitted under the same noise_id, and refused otherwise.
class NoisePool {
 public:
  // Throws ProtocolError on a duplicate (site, noise_id) submission.
  void submit(const std::string& site_id, const std::string& noise_id,
              const glmm::StatsPayload& noise);

  // Blocks until all expected sites have submitted, then removes and
  // returns the noise sum (accumulated in the given site order). Timeout or
  // abort -> ProtocolError naming the sites still missing; partial sums are
  // never released.
  glmm::StatsPayload take_sum(const std::string& noise_id,
                              const std::vector<std::string>& expected_sites,
                              std::chrono::milliseconds timeout);

  // Fails all pending and future take_sum calls; used when a submission
  // channel breaks.
  void abort(const std::string& why);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::map<std::string, glmm::StatsPayload>> entries_;
  std::string abort_reason_;
};

// Drains NOISE messages from site connections into a shared pool, one reader
// thread per attached channel. A malformed submission aborts the pool so any
// blocked take_sum fails instead of hanging; a plain disconnect just ends
// that reader (the refusal then comes from the take_sum timeout).
class CompensatorServer {
 public:
  explicit CompensatorServer(std::shared_ptr<NoisePool> pool);
  ~CompensatorServer();

  CompensatorServer(const CompensatorServer&) = delete;
  CompensatorServer& operator=(const CompensatorServer&) = delete;

  void attach(ChannelPtr channel);
  void stop();  // closes all channels and joins the readers

 private:
  void serve(const ChannelPtr& channel);

  std::shared_ptr<NoisePool> pool_;
  std::mutex mu_;
  std::vector<ChannelPtr> channels_;
  std::vector<std::thread> threads_;
  bool stopped_ = false;
};

}  // namespace fedglmm::fed
