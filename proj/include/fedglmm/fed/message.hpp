#pragma once

// Newline-delimited JSON wire schema. Seven message types discriminated by
// a `type` field; envelopes batch per-SNP entries so one round trip can
// cover many SNPs. Serialization is deterministic (sorted keys, shortest
// lossless float form), which makes transcripts comparable across
// transports and runs.

#include <string>
#include <variant>
#include <vector>

#include "fedglmm/glmm.hpp"
#include "json.hpp"

namespace fedglmm::fed {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

enum class MessageKind { kInit, kInitAck, kGlobalUpdate, kLocalStats, kFinalize, kNoise, kShutdown };

const char* kind_name(MessageKind kind);

struct MaskingConfig {
  bool enabled = false;
  double noise_sd = 1.0;
};

// Coordinator -> site, once per connection.
struct InitMessage {
  int protocol = kProtocolVersion;
  int p = 0;  // covariate count; the fixed-effect vector has p+1 entries
  std::vector<std::string> snp_ids;
  double tol = 1e-6;
  int max_outer_iterations = 50;
  double sigma2_init = 0.1;
  bool sigma2_update = true;
  int batch = 64;
  MaskingConfig masking;
};

// Site -> coordinator reply; a non-empty `error` declines the scan.
struct InitAckMessage {
  std::string site_id;
  std::string token;
  long n_i = 0;
  int covariate_count = 0;
  std::vector<std::string> variant_ids;
  std::string error;
};

// One SNP's entry in a GLOBAL_UPDATE envelope. grad/hess are the previous
// round's aggregates (zero on the first round).
struct SnpUpdate {
  std::string snp_id;
  int iteration = 0;  // this SNP's 1-based round counter
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  bool converged = false;
  Eigen::VectorXd grad_global;
  Eigen::MatrixXd hess_global;
};

struct GlobalUpdateMessage {
  int round = 0;  // batch-level round counter
  std::vector<SnpUpdate> updates;
};

// One SNP's entry in a LOCAL_STATS envelope. noise_id is set when the
// payload is masked.
struct SnpStats {
  glmm::LocalStats stats;
  std::string noise_id;
};

struct LocalStatsMessage {
  std::string site_id;
  int round = 0;
  std::vector<SnpStats> stats;
};

struct SnpResult {
  std::string snp_id;
  bool has_stats = false;
  double beta = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 0.0;
  int n_iterations = 0;
  bool converged = false;
  double sigma2 = 0.0;
  std::string note;
};

struct FinalizeMessage {
  std::vector<SnpResult> results;
};

// Site -> compensator carries site_id + payload; compensator -> coordinator
// carries the aggregated payload + n_submissions.
struct NoiseMessage {
  std::string site_id;
  std::string noise_id;
  glmm::StatsPayload payload;
  int n_submissions = 0;
};

struct ShutdownMessage {
  bool complete = false;
};

using AnyMessage = std::variant<InitMessage, InitAckMessage, GlobalUpdateMessage,
                                LocalStatsMessage, FinalizeMessage, NoiseMessage, ShutdownMessage>;

MessageKind kind_of(const AnyMessage& msg);

// One JSON line without the trailing newline.
std::string serialize(const InitMessage& m);
std::string serialize(const InitAckMessage& m);
std::string serialize(const GlobalUpdateMessage& m);
std::string serialize(const LocalStatsMessage& m);
std::string serialize(const FinalizeMessage& m);
std::string serialize(const NoiseMessage& m);
std::string serialize(const ShutdownMessage& m);
std::string serialize(const AnyMessage& m);

// Parses and validates one line; throws ProtocolError quoting the line on
// any malformation.
AnyMessage parse_message(const std::string& line);

// Expects a specific type; throws ProtocolError naming what arrived instead.
template <typename T>
T expect_message(const std::string& line);

}  // namespace fedglmm::fed
