#include "fedglmm/fed/site.hpp"

#include <utility>

#include "fedglmm/errors.hpp"
#include "fedglmm/fed/masking.hpp"
#include "fedglmm/log.hpp"

namespace fedglmm::fed {

SiteWorker::SiteWorker(SiteDataset data, SiteWorkerConfig config)
    : data_(std::move(data)), config_(std::move(config)) {
  if (data_.site_id.empty()) throw ParamError("site worker needs a site id");
  if (data_.genotypes.has_missing()) {
    throw ParamError("site '" + data_.site_id + "' genotypes must be imputed before serving");
  }
  io::require_binary({data_.genotypes.sample_ids, data_.phenotype});
  for (Eigen::Index v = 0; v < data_.genotypes.n_variants(); ++v) {
    variant_index_.emplace(data_.genotypes.variant_ids[static_cast<std::size_t>(v)], v);
  }
}

const glmm::SiteData& SiteWorker::site_data_for(const std::string& snp_id) {
  const auto cached = design_cache_.find(snp_id);
  if (cached != design_cache_.end()) return cached->second;
  const auto it = variant_index_.find(snp_id);
  if (it == variant_index_.end()) {
    throw ProtocolError("site '" + data_.site_id + "': unknown snp id '" + snp_id + "'");
  }
  return design_cache_.emplace(snp_id, glmm::make_site_data(data_, it->second)).first->second;
}

void SiteWorker::handle_update(const GlobalUpdateMessage& msg, Channel& coordinator,
                               Channel* compensator) {
  LocalStatsMessage reply;
  reply.site_id = data_.site_id;
  reply.round = msg.round;
  reply.stats.reserve(msg.updates.size());
  for (const SnpUpdate& u : msg.updates) {
    if (u.beta.size() != init_.p + 1) {
      throw ProtocolError("site '" + data_.site_id + "': beta has " +
                          std::to_string(u.beta.size()) + " entries, expected " +
                          std::to_string(init_.p + 1));
    }
    const glmm::SiteData& site = site_data_for(u.snp_id);
    // iteration 1 is a (re)start for this SNP: forget any stale mode.
    if (u.iteration <= 1) mu_state_[u.snp_id] = 0.0;
    double& mu = mu_state_[u.snp_id];
    SnpStats entry;
    entry.stats = glmm::evaluate_round(site, u.beta, u.sigma2, mu, init_.tol);
    if (masking_) {
      const MaskedPayload masked =
          mask_payload(entry.stats.payload, noise_rng_, init_.masking.noise_sd);
      entry.stats.payload = masked.masked;
      entry.stats.local_se.resize(0);  // per-site SEs stay private under masking
      entry.noise_id = make_noise_id(u.snp_id, msg.round);
      NoiseMessage noise;
      noise.site_id = data_.site_id;
      noise.noise_id = entry.noise_id;
      noise.payload = masked.noise;
      compensator->send_line(serialize(noise));
    }
    reply.stats.push_back(std::move(entry));
  }
  coordinator.send_line(serialize(reply));
}

bool SiteWorker::run(Channel& coordinator, Channel* compensator) {
  const std::optional<std::string> init_line = coordinator.recv_line();
  if (!init_line) throw TransportError("site '" + data_.site_id + "': coordinator hung up");
  init_ = expect_message<InitMessage>(*init_line);

  InitAckMessage ack;
  ack.site_id = data_.site_id;
  ack.token = config_.token;
  ack.n_i = static_cast<long>(data_.genotypes.n_samples());
  ack.covariate_count = static_cast<int>(data_.covariates.values.rows());
  ack.variant_ids = data_.genotypes.variant_ids;
  if (init_.p != ack.covariate_count) {
    ack.error = "covariate count mismatch: coordinator expects p=" + std::to_string(init_.p) +
                ", site holds " + std::to_string(ack.covariate_count);
  } else if (init_.masking.enabled && compensator == nullptr) {
    ack.error = "masking requested but no compensator endpoint configured";
  } else {
    for (const std::string& snp : init_.snp_ids) {
      if (variant_index_.find(snp) == variant_index_.end()) {
        ack.error = "snp '" + snp + "' not present at this site";
        break;
      }
    }
  }
  coordinator.send_line(serialize(ack));
  if (!ack.error.empty()) {
    throw ConfigError("site '" + data_.site_id + "': " + ack.error);
  }
  masking_ = init_.masking.enabled;
  if (masking_) noise_rng_.seed(config_.noise_seed);

  while (true) {
    const std::optional<std::string> line = coordinator.recv_line();
    if (!line) {
      throw TransportError("site '" + data_.site_id + "': connection lost mid-scan");
    }
    AnyMessage msg = parse_message(*line);
    if (auto* update = std::get_if<GlobalUpdateMessage>(&msg)) {
      handle_update(*update, coordinator, compensator);
    } else if (auto* fin = std::get_if<FinalizeMessage>(&msg)) {
      for (const SnpResult& r : fin->results) {
        io::ResultRow row;
        row.snp_id = r.snp_id;
        row.has_stats = r.has_stats;
        row.beta = r.beta;
        row.se = r.se;
        row.z = r.z;
        row.p_value = r.p_value;
        row.n_iterations = r.n_iterations;
        row.converged = r.converged;
        row.sigma2 = r.sigma2;
        row.note = r.note;
        results_.push_back(std::move(row));
        design_cache_.erase(r.snp_id);
        mu_state_.erase(r.snp_id);
      }
    } else if (auto* shutdown = std::get_if<ShutdownMessage>(&msg)) {
      if (!shutdown->complete) {
        FEDGLMM_WARN("site %s: scan aborted by coordinator, discarding partial results",
                     data_.site_id.c_str());
        results_.clear();
      }
      return shutdown->complete;
    } else {
      throw ProtocolError("site '" + data_.site_id + "': unexpected " +
                          kind_name(kind_of(msg)) + " message");
    }
  }
}

}  // namespace fedglmm::fed
