#include "fedglmm/fed/coordinator.hpp"

#include <algorithm>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"
#include "fedglmm/report.hpp"

namespace fedglmm::fed {

Coordinator::Coordinator(CoordinatorConfig config, std::vector<ChannelPtr> site_channels,
                         std::shared_ptr<NoisePool> pool)
    : config_(std::move(config)),
      pending_channels_(std::move(site_channels)),
      pool_(std::move(pool)) {
  if (pending_channels_.empty()) throw ConfigError("coordinator needs at least one site");
  if (config_.masking.enabled && !pool_) {
    throw ConfigError("masking is enabled but no compensator noise pool was provided");
  }
  if (config_.batch < 1) throw ConfigError("batch size must be >= 1");
  if (config_.p < 0) throw ConfigError("covariate count must be >= 0");
  std::unordered_set<std::string> seen;
  for (const std::string& snp : config_.snp_ids) {
    if (snp.empty()) throw ConfigError("empty snp id in scan list");
    if (!seen.insert(snp).second) {
      throw ConfigError("duplicate snp id in scan list: '" + snp + "'");
    }
  }
}

void Coordinator::rebuild_site_ids() {
  site_ids_.clear();
  site_ids_.reserve(sites_.size());
  for (const Site& s : sites_) site_ids_.push_back(s.site_id);
}

void Coordinator::handshake() {
  InitMessage init;
  init.protocol = kProtocolVersion;
  init.p = config_.p;
  init.snp_ids = config_.snp_ids;
  init.tol = config_.fit.tol;
  init.max_outer_iterations = config_.fit.max_outer_iterations;
  init.sigma2_init = config_.fit.sigma2_init;
  init.sigma2_update = config_.fit.sigma2_update_enabled;
  init.batch = config_.batch;
  init.masking = config_.masking;
  const std::string line = serialize(init);
  for (const ChannelPtr& ch : pending_channels_) ch->send_line(line);

  sites_.clear();
  std::vector<std::string> first_variants;
  std::string first_site;
  for (const ChannelPtr& ch : pending_channels_) {
    const std::optional<std::string> reply = ch->recv_line();
    if (!reply) throw TransportError("a site disconnected during the handshake");
    const InitAckMessage ack = expect_message<InitAckMessage>(*reply);
    if (!ack.error.empty()) {
      throw ConfigError("site '" + ack.site_id + "' rejected the handshake: " + ack.error);
    }
    if (ack.token != config_.token) {
      throw ConfigError("site '" + ack.site_id + "' presented a bad auth token");
    }
    if (ack.covariate_count != config_.p) {
      throw ConfigError("site '" + ack.site_id + "' holds " +
                        std::to_string(ack.covariate_count) +
                        " covariates, coordinator expects " + std::to_string(config_.p));
    }
    if (ack.n_i < 1) throw ConfigError("site '" + ack.site_id + "' holds no samples");
    for (const Site& s : sites_) {
      if (s.site_id == ack.site_id) {
        throw ConfigError("two sites claim the id '" + ack.site_id + "'");
      }
    }
    if (sites_.empty()) {
      first_variants = ack.variant_ids;
      first_site = ack.site_id;
    } else if (ack.variant_ids != first_variants) {
      size_t i = 0;
      const size_t n = std::min(first_variants.size(), ack.variant_ids.size());
      while (i < n && first_variants[i] == ack.variant_ids[i]) ++i;
      const std::string a = i < first_variants.size() ? first_variants[i] : "<end>";
      const std::string b = i < ack.variant_ids.size() ? ack.variant_ids[i] : "<end>";
      throw AlignmentError("variant lists disagree between sites '" + first_site + "' and '" +
                           ack.site_id + "' at position " + std::to_string(i) + ": '" + a +
                           "' vs '" + b + "'");
    }
    sites_.push_back(Site{ch, ack.site_id, ack.n_i});
  }
  // Ascending site id fixes the aggregation order independent of connection
  // order, so repeated runs sum in the same sequence.
  std::sort(sites_.begin(), sites_.end(),
            [](const Site& a, const Site& b) { return a.site_id < b.site_id; });
  rebuild_site_ids();
  FEDGLMM_INFO("handshake complete: %zu site(s), %zu snp(s), masking %s", sites_.size(),
               config_.snp_ids.size(), config_.masking.enabled ? "on" : "off");
}

void Coordinator::broadcast(const std::string& line) {
  for (const Site& site : sites_) {
    try {
      site.channel->send_line(line);
    } catch (const TransportError& e) {
      throw TransportError("send to site '" + site.site_id + "' failed: " + e.what());
    }
  }
}

void Coordinator::run_batch(const std::vector<std::string>& snps) {
  if (snps.empty()) return;
  const int width = config_.p + 1;
  std::unordered_map<std::string, glmm::GlmmFitState> states;
  std::unordered_map<std::string, glmm::StatsPayload> last_sums;
  std::vector<std::string> active;
  active.reserve(snps.size());
  for (const std::string& snp : snps) {
    states.emplace(snp, glmm::GlmmFitState(snp, width, config_.fit));
    active.push_back(snp);
  }

  while (!active.empty()) {
    const int round = ++round_cursor_;
    GlobalUpdateMessage update;
    update.round = round;
    update.updates.reserve(active.size());
    for (const std::string& snp : active) {
      const std::optional<glmm::EvalRequest> req = states.at(snp).next_request();
      if (!req) throw ProtocolError("internal: active snp '" + snp + "' has no pending request");
      SnpUpdate u;
      u.snp_id = snp;
      u.iteration = req->round;
      u.beta = req->beta;
      u.sigma2 = req->sigma2;
      u.converged = false;
      const auto it = last_sums.find(snp);
      if (it != last_sums.end()) {
        u.grad_global = it->second.gradient;
        u.hess_global = it->second.hessian;
      } else {
        u.grad_global = Eigen::VectorXd::Zero(width);
        u.hess_global = Eigen::MatrixXd::Zero(width, width);
      }
      update.updates.push_back(std::move(u));
    }
    broadcast(serialize(update));

    std::vector<LocalStatsMessage> replies;
    replies.reserve(sites_.size());
    for (const Site& site : sites_) {
      const std::optional<std::string> line = site.channel->recv_line();
      if (!line) {
        throw TransportError("site '" + site.site_id + "' disconnected mid-round");
      }
      LocalStatsMessage reply = expect_message<LocalStatsMessage>(*line);
      if (reply.site_id != site.site_id) {
        throw ProtocolError("stats from '" + reply.site_id + "' arrived on the connection of '" +
                            site.site_id + "'");
      }
      if (reply.round != round) {
        throw ProtocolError("site '" + site.site_id + "' answered round " +
                            std::to_string(reply.round) + " instead of " + std::to_string(round));
      }
      if (reply.stats.size() != active.size()) {
        throw ProtocolError("site '" + site.site_id + "' sent " +
                            std::to_string(reply.stats.size()) + " stats entries, expected " +
                            std::to_string(active.size()));
      }
      replies.push_back(std::move(reply));
    }

    std::vector<std::string> finished;
    for (size_t k = 0; k < active.size(); ++k) {
      const std::string& snp = active[k];
      const std::string expected_noise = make_noise_id(snp, round);
      std::vector<glmm::LocalStats> stats;
      stats.reserve(sites_.size());
      for (size_t s = 0; s < sites_.size(); ++s) {
        const SnpStats& entry = replies[s].stats[k];
        if (entry.stats.snp_id != snp) {
          throw ProtocolError("site '" + sites_[s].site_id + "' answered snp '" +
                              entry.stats.snp_id + "' in the slot of '" + snp + "'");
        }
        if (config_.masking.enabled) {
          if (entry.noise_id != expected_noise) {
            throw ProtocolError("site '" + sites_[s].site_id + "' tagged snp '" + snp +
                                "' with noise id '" + entry.noise_id + "', expected '" +
                                expected_noise + "'");
          }
        } else if (!entry.noise_id.empty()) {
          throw ProtocolError("site '" + sites_[s].site_id +
                              "' attached a noise id to an unmasked run");
        }
        stats.push_back(entry.stats);
        stats.back().site_id = sites_[s].site_id;
      }
      glmm::RoundAggregate agg = glmm::aggregate(stats);
      if (config_.masking.enabled) {
        const glmm::StatsPayload noise_sum =
            pool_->take_sum(expected_noise, site_ids_, config_.noise_timeout);
        glmm::payload_subtract(agg.payload_sum, noise_sum);
      }
      glmm::GlmmFitState& state = states.at(snp);
      last_sums[snp] = agg.payload_sum;
      state.absorb(agg);
      if (state.done()) finished.push_back(snp);
    }

    if (!finished.empty()) {
      FinalizeMessage fin;
      fin.results.reserve(finished.size());
      for (const std::string& snp : finished) {
        const glmm::FitResult& fit = states.at(snp).result();
        const io::ResultRow row = row_from(fit);
        rows_.at(row_index_.at(snp)) = row;
        fits_.at(row_index_.at(snp)) = fit;
        SnpResult res;
        res.snp_id = row.snp_id;
        res.has_stats = row.has_stats;
        res.beta = row.beta;
        res.se = row.se;
        res.z = row.z;
        res.p_value = row.p_value;
        res.n_iterations = row.n_iterations;
        res.converged = row.converged;
        res.sigma2 = row.sigma2;
        res.note = row.note;
        fin.results.push_back(std::move(res));
        last_sums.erase(snp);
      }
      broadcast(serialize(fin));
      active.erase(std::remove_if(active.begin(), active.end(),
                                  [&](const std::string& snp) {
                                    return std::find(finished.begin(), finished.end(), snp) !=
                                           finished.end();
                                  }),
                   active.end());
    }
  }
}

void Coordinator::prune_and_resync() {
  const size_t before = sites_.size();
  // A barrier round with an empty update list: every live site answers with
  // an empty stats list for this round. Anything older still in flight from
  // the aborted round is discarded on the way.
  const int barrier = ++round_cursor_;
  GlobalUpdateMessage sync;
  sync.round = barrier;
  const std::string line = serialize(sync);

  std::vector<Site> alive;
  for (Site& site : sites_) {
    bool ok = false;
    try {
      site.channel->send_line(line);
      while (true) {
        const std::optional<std::string> got = site.channel->recv_line();
        if (!got) break;
        const LocalStatsMessage reply = expect_message<LocalStatsMessage>(*got);
        if (reply.round == barrier) {
          ok = reply.site_id == site.site_id && reply.stats.empty();
          break;
        }
        if (reply.round > barrier) break;
        // Stale reply from the interrupted round; drop it and keep reading.
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (ok) {
      alive.push_back(site);
    } else {
      FEDGLMM_WARN("dropping site '%s' after a failed resync", site.site_id.c_str());
      try {
        site.channel->close();
      } catch (...) {
      }
    }
  }
  sites_ = std::move(alive);
  rebuild_site_ids();
  if (sites_.empty()) {
    throw TransportError("all sites were lost; the scan cannot continue");
  }
  if (sites_.size() == before) {
    throw ProtocolError(
        "a batch failed but every site answered the resync barrier; aborting instead of retrying "
        "forever");
  }
  FEDGLMM_WARN("continuing with %zu surviving site(s)", sites_.size());
}

void Coordinator::shutdown_sites(bool complete) {
  ShutdownMessage bye;
  bye.complete = complete;
  const std::string line = serialize(bye);
  for (const Site& site : sites_) {
    try {
      site.channel->send_line(line);
    } catch (...) {
    }
    try {
      site.channel->close();
    } catch (...) {
    }
  }
}

io::ResultRow Coordinator::row_from(const glmm::FitResult& fit) const {
  return result_row_from_fit(fit);
}

io::ResultsTable Coordinator::run() {
  rows_.assign(config_.snp_ids.size(), io::ResultRow{});
  fits_.assign(config_.snp_ids.size(), glmm::FitResult{});
  row_index_.clear();
  for (size_t i = 0; i < config_.snp_ids.size(); ++i) row_index_[config_.snp_ids[i]] = i;

  try {
    handshake();
    for (size_t at = 0; at < config_.snp_ids.size(); at += static_cast<size_t>(config_.batch)) {
      const size_t end =
          std::min(config_.snp_ids.size(), at + static_cast<size_t>(config_.batch));
      std::vector<std::string> batch(config_.snp_ids.begin() + static_cast<long>(at),
                                     config_.snp_ids.begin() + static_cast<long>(end));
      for (;;) {
        // A restarted batch refits only the snps that have no result yet;
        // anything finalized before the failure keeps its row.
        std::vector<std::string> pending;
        for (const std::string& snp : batch) {
          if (rows_.at(row_index_.at(snp)).snp_id.empty()) pending.push_back(snp);
        }
        try {
          run_batch(pending);
          break;
        } catch (const TransportError& e) {
          if (!config_.allow_quorum_restart) throw;
          FEDGLMM_WARN("site failure mid-batch: %s", e.what());
          prune_and_resync();
        }
      }
    }
  } catch (...) {
    shutdown_sites(false);
    throw;
  }
  shutdown_sites(true);
  FEDGLMM_INFO("scan finished: %zu snp(s)", rows_.size());
  return rows_;
}

}  // namespace fedglmm::fed
