#pragma once

// The site-side protocol loop: answers INIT with a capability report, then
// serves evaluation rounds until SHUTDOWN. Individual-level data never
// leaves this class; every reply carries only aggregate statistics.

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>

#include "fedglmm/data_io.hpp"
#include "fedglmm/fed/channel.hpp"
#include "fedglmm/fed/message.hpp"
#include "fedglmm/glmm.hpp"
#include "fedglmm/types.hpp"

namespace fedglmm::fed {

struct SiteWorkerConfig {
  std::string token;
  std::uint64_t noise_seed = 0;  // rng seed when masking is negotiated
};

class SiteWorker {
 public:
  SiteWorker(SiteDataset data, SiteWorkerConfig config);

  // Serves one coordinator connection to completion. `compensator` is
  // required once the coordinator negotiates masking; a masked INIT with no
  // compensator channel is declined. Returns true when the scan finished
  // cleanly (SHUTDOWN complete=true).
  bool run(Channel& coordinator, Channel* compensator);

  // Results recorded from FINALIZE messages; only meaningful after a clean
  // finish.
  const io::ResultsTable& results() const { return results_; }

 private:
  void handle_update(const GlobalUpdateMessage& msg, Channel& coordinator, Channel* compensator);
  const glmm::SiteData& site_data_for(const std::string& snp_id);

  SiteDataset data_;
  SiteWorkerConfig config_;
  InitMessage init_;
  bool masking_ = false;
  std::mt19937_64 noise_rng_;
  std::map<std::string, Eigen::Index> variant_index_;
  std::map<std::string, glmm::SiteData> design_cache_;
  std::map<std::string, double> mu_state_;
  io::ResultsTable results_;
};

}  // namespace fedglmm::fed
