#include "fedglmm/fed/masking.hpp"

#include <algorithm>
#include <optional>

#include "fedglmm/errors.hpp"
#include "fedglmm/fed/message.hpp"

namespace fedglmm::fed {

MaskedPayload mask_payload(const glmm::StatsPayload& payload, std::mt19937_64& rng,
                           double noise_sd) {
  if (!(noise_sd > 0.0)) throw ParamError("mask_payload: noise_sd must be positive");
  std::normal_distribution<double> gauss(0.0, noise_sd);
  MaskedPayload out;
  out.noise = glmm::payload_zero_like(payload);

  for (Eigen::Index i = 0; i < payload.gradient.size(); ++i) {
    out.noise.gradient[i] = gauss(rng);
  }
  for (Eigen::Index r = 0; r < payload.hessian.rows(); ++r) {
    for (Eigen::Index c = r; c < payload.hessian.cols(); ++c) {
      const double n = gauss(rng);
      out.noise.hessian(r, c) = n;
      out.noise.hessian(c, r) = n;
    }
  }
  out.noise.mu_hat = gauss(rng);
  out.noise.mu_curvature = gauss(rng);
  out.noise.mu_second_moment = gauss(rng);
  out.noise.laplace_loglik = gauss(rng);

  out.masked = payload;
  glmm::payload_add(out.masked, out.noise);
  return out;
}

std::string make_noise_id(const std::string& snp_id, int round) {
  return snp_id + "#" + std::to_string(round);
}

void NoisePool::submit(const std::string& site_id, const std::string& noise_id,
                       const glmm::StatsPayload& noise) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& per_site = entries_[noise_id];
    if (!per_site.emplace(site_id, noise).second) {
      throw ProtocolError("duplicate noise submission from site '" + site_id + "' for '" +
                          noise_id + "'");
    }
  }
  cv_.notify_all();
}

glmm::StatsPayload NoisePool::take_sum(const std::string& noise_id,
                                       const std::vector<std::string>& expected_sites,
                                       std::chrono::milliseconds timeout) {
  if (expected_sites.empty()) throw ParamError("take_sum: no expected sites");
  std::unique_lock<std::mutex> lock(mu_);
  const auto complete = [&] {
    const auto it = entries_.find(noise_id);
    if (it == entries_.end()) return false;
    return std::all_of(expected_sites.begin(), expected_sites.end(),
                       [&](const std::string& s) { return it->second.count(s) > 0; });
  };
  cv_.wait_for(lock, timeout, [&] { return complete() || !abort_reason_.empty(); });
  if (!complete()) {
    std::string missing;
    const auto it = entries_.find(noise_id);
    for (const std::string& s : expected_sites) {
      if (it == entries_.end() || it->second.count(s) == 0) {
        missing += missing.empty() ? s : ", " + s;
      }
    }
    std::string why = abort_reason_.empty() ? "timed out" : abort_reason_;
    throw ProtocolError("unmasking refused for '" + noise_id + "' (" + why +
                        "); missing noise from: " + missing);
  }
  auto node = entries_.extract(noise_id);
  glmm::StatsPayload sum = glmm::payload_zero_like(node.mapped().begin()->second);
  for (const std::string& site : expected_sites) {
    glmm::payload_add(sum, node.mapped().at(site));
  }
  return sum;
}

void NoisePool::abort(const std::string& why) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (abort_reason_.empty()) abort_reason_ = why;
  }
  cv_.notify_all();
}

CompensatorServer::CompensatorServer(std::shared_ptr<NoisePool> pool) : pool_(std::move(pool)) {
  if (!pool_) throw ParamError("compensator needs a noise pool");
}

CompensatorServer::~CompensatorServer() { stop(); }

void CompensatorServer::attach(ChannelPtr channel) {
  if (!channel) throw ParamError("compensator: null channel");
  std::lock_guard<std::mutex> lock(mu_);
  if (stopped_) throw ProtocolError("compensator already stopped");
  channels_.push_back(channel);
  threads_.emplace_back([this, channel] { serve(channel); });
}

void CompensatorServer::serve(const ChannelPtr& channel) {
  try {
    while (true) {
      const std::optional<std::string> line = channel->recv_line();
      if (!line) return;  // site hung up; completeness is enforced at take_sum
      const NoiseMessage noise = expect_message<NoiseMessage>(*line);
      pool_->submit(noise.site_id, noise.noise_id, noise.payload);
    }
  } catch (const std::exception& e) {
    pool_->abort(e.what());
  }
}

void CompensatorServer::stop() {
  std::vector<ChannelPtr> channels;
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopped_ = true;
    channels.swap(channels_);
    threads.swap(threads_);
  }
  for (const ChannelPtr& ch : channels) {
    try {
      ch->close();
    } catch (...) {
    }
  }
  for (std::thread& t : threads) {
    if (t.joinable()) t.join();
  }
}

}  // namespace fedglmm::fed
