#include "fedglmm/fed/message.hpp"

#include <cmath>
#include <limits>

#include "fedglmm/errors.hpp"

namespace fedglmm::fed {

namespace {

std::string clip(const std::string& line) {
  if (line.size() <= 200) return line;
  return line.substr(0, 200) + "...";
}

[[noreturn]] void bad(const std::string& line, const std::string& why) {
  throw ProtocolError("malformed message (" + why + "): " + clip(line));
}

// JSON has no NaN/Inf literals; the few places they can legally occur
// (diverging likelihoods) are carried as tagged strings.
json num_out(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "NaN";
  return v > 0 ? "Inf" : "-Inf";
}

double num_in(const json& j, const std::string& line) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Inf") return std::numeric_limits<double>::infinity();
    if (s == "-Inf") return -std::numeric_limits<double>::infinity();
  }
  bad(line, "expected a number");
}

json vec_out(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(num_out(v[i]));
  return arr;
}

Eigen::VectorXd vec_in(const json& j, const std::string& line) {
  if (!j.is_array()) bad(line, "expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = num_in(j[i], line);
  return v;
}

json mat_out(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num_out(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_in(const json& j, const std::string& line) {
  if (!j.is_array()) bad(line, "expected a matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  Eigen::MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array()) bad(line, "expected a matrix row");
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(row.size());
      m.resize(rows, cols);
    } else if (static_cast<Eigen::Index>(row.size()) != cols) {
      bad(line, "ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = num_in(row[static_cast<std::size_t>(c)], line);
    }
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

const json& need(const json& j, const char* field, const std::string& line) {
  const auto it = j.find(field);
  if (it == j.end()) bad(line, std::string("missing field '") + field + "'");
  return *it;
}

std::string str_in(const json& j, const std::string& line) {
  if (!j.is_string()) bad(line, "expected a string");
  return j.get<std::string>();
}

long int_in(const json& j, const std::string& line) {
  if (!j.is_number_integer()) bad(line, "expected an integer");
  return j.get<long>();
}

bool bool_in(const json& j, const std::string& line) {
  if (!j.is_boolean()) bad(line, "expected a boolean");
  return j.get<bool>();
}

std::vector<std::string> strings_in(const json& j, const std::string& line) {
  if (!j.is_array()) bad(line, "expected an array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const json& e : j) out.push_back(str_in(e, line));
  return out;
}

json payload_out(const glmm::StatsPayload& p) {
  json j;
  j["gradient"] = vec_out(p.gradient);
  j["hessian"] = mat_out(p.hessian);
  j["mu_hat"] = num_out(p.mu_hat);
  j["mu_curvature"] = num_out(p.mu_curvature);
  j["mu_second_moment"] = num_out(p.mu_second_moment);
  j["laplace_loglik"] = num_out(p.laplace_loglik);
  return j;
}

glmm::StatsPayload payload_in(const json& j, const std::string& line) {
  glmm::StatsPayload p;
  p.gradient = vec_in(need(j, "gradient", line), line);
  p.hessian = mat_in(need(j, "hessian", line), line);
  p.mu_hat = num_in(need(j, "mu_hat", line), line);
  p.mu_curvature = num_in(need(j, "mu_curvature", line), line);
  p.mu_second_moment = num_in(need(j, "mu_second_moment", line), line);
  p.laplace_loglik = num_in(need(j, "laplace_loglik", line), line);
  return p;
}

}  // namespace

const char* kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::kInit: return "INIT";
    case MessageKind::kInitAck: return "INIT_ACK";
    case MessageKind::kGlobalUpdate: return "GLOBAL_UPDATE";
    case MessageKind::kLocalStats: return "LOCAL_STATS";
    case MessageKind::kFinalize: return "FINALIZE";
    case MessageKind::kNoise: return "NOISE";
    case MessageKind::kShutdown: return "SHUTDOWN";
  }
  return "?";
}

MessageKind kind_of(const AnyMessage& msg) {
  return static_cast<MessageKind>(msg.index());
}

std::string serialize(const InitMessage& m) {
  json j;
  j["type"] = "INIT";
  j["protocol"] = m.protocol;
  j["p"] = m.p;
  j["snp_ids"] = m.snp_ids;
  j["tol"] = m.tol;
  j["max_outer_iterations"] = m.max_outer_iterations;
  j["sigma2_init"] = m.sigma2_init;
  j["sigma2_update"] = m.sigma2_update;
  j["batch"] = m.batch;
  j["masking"] = json{{"enabled", m.masking.enabled}, {"noise_sd", m.masking.noise_sd}};
  return j.dump();
}

std::string serialize(const InitAckMessage& m) {
  json j;
  j["type"] = "INIT_ACK";
  j["site_id"] = m.site_id;
  j["token"] = m.token;
  j["n_i"] = m.n_i;
  j["covariate_count"] = m.covariate_count;
  j["variant_ids"] = m.variant_ids;
  if (!m.error.empty()) j["error"] = m.error;
  return j.dump();
}

std::string serialize(const GlobalUpdateMessage& m) {
  json j;
  j["type"] = "GLOBAL_UPDATE";
  j["round"] = m.round;
  json updates = json::array();
  for (const SnpUpdate& u : m.updates) {
    json e;
    e["snp_id"] = u.snp_id;
    e["iteration"] = u.iteration;
    e["beta"] = vec_out(u.beta);
    e["sigma2"] = num_out(u.sigma2);
    e["converged"] = u.converged;
    e["grad_global"] = vec_out(u.grad_global);
    e["hess_global"] = mat_out(u.hess_global);
    updates.push_back(std::move(e));
  }
  j["updates"] = std::move(updates);
  return j.dump();
}

std::string serialize(const LocalStatsMessage& m) {
  json j;
  j["type"] = "LOCAL_STATS";
  j["site_id"] = m.site_id;
  j["round"] = m.round;
  json stats = json::array();
  for (const SnpStats& s : m.stats) {
    json e;
    e["snp_id"] = s.stats.snp_id;
    e["n_i"] = s.stats.n_i;
    e["payload"] = payload_out(s.stats.payload);
    if (s.stats.local_se.size() > 0) e["local_se"] = vec_out(s.stats.local_se);
    e["hessian_singular"] = s.stats.hessian_singular;
    e["mu_converged"] = s.stats.mu_converged;
    if (!s.noise_id.empty()) e["noise_id"] = s.noise_id;
    stats.push_back(std::move(e));
  }
  j["stats"] = std::move(stats);
  return j.dump();
}

std::string serialize(const FinalizeMessage& m) {
  json j;
  j["type"] = "FINALIZE";
  json results = json::array();
  for (const SnpResult& r : m.results) {
    json e;
    e["snp_id"] = r.snp_id;
    e["has_stats"] = r.has_stats;
    if (r.has_stats) {
      e["beta"] = num_out(r.beta);
      e["se"] = num_out(r.se);
      e["z"] = num_out(r.z);
      e["p_value"] = num_out(r.p_value);
    }
    e["n_iterations"] = r.n_iterations;
    e["converged"] = r.converged;
    e["sigma2"] = num_out(r.sigma2);
    if (!r.note.empty()) e["note"] = r.note;
    results.push_back(std::move(e));
  }
  j["results"] = std::move(results);
  return j.dump();
}

std::string serialize(const NoiseMessage& m) {
  json j;
  j["type"] = "NOISE";
  if (!m.site_id.empty()) j["site_id"] = m.site_id;
  j["noise_id"] = m.noise_id;
  j["payload"] = payload_out(m.payload);
  if (m.n_submissions > 0) j["n_submissions"] = m.n_submissions;
  return j.dump();
}

std::string serialize(const ShutdownMessage& m) {
  json j;
  j["type"] = "SHUTDOWN";
  j["complete"] = m.complete;
  return j.dump();
}

std::string serialize(const AnyMessage& m) {
  return std::visit([](const auto& msg) { return serialize(msg); }, m);
}

AnyMessage parse_message(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    bad(line, e.what());
  }
  if (!j.is_object()) bad(line, "not an object");
  const std::string type = str_in(need(j, "type", line), line);

  if (type == "INIT") {
    InitMessage m;
    m.protocol = static_cast<int>(int_in(need(j, "protocol", line), line));
    if (m.protocol != kProtocolVersion) bad(line, "unsupported protocol version");
    m.p = static_cast<int>(int_in(need(j, "p", line), line));
    m.snp_ids = strings_in(need(j, "snp_ids", line), line);
    m.tol = num_in(need(j, "tol", line), line);
    m.max_outer_iterations = static_cast<int>(int_in(need(j, "max_outer_iterations", line), line));
    m.sigma2_init = num_in(need(j, "sigma2_init", line), line);
    m.sigma2_update = bool_in(need(j, "sigma2_update", line), line);
    m.batch = static_cast<int>(int_in(need(j, "batch", line), line));
    const json& mask = need(j, "masking", line);
    m.masking.enabled = bool_in(need(mask, "enabled", line), line);
    m.masking.noise_sd = num_in(need(mask, "noise_sd", line), line);
    if (m.p < 0 || m.batch < 1 || !(m.tol > 0)) bad(line, "invalid INIT parameters");
    return m;
  }
  if (type == "INIT_ACK") {
    InitAckMessage m;
    m.site_id = str_in(need(j, "site_id", line), line);
    m.token = str_in(need(j, "token", line), line);
    m.n_i = int_in(need(j, "n_i", line), line);
    m.covariate_count = static_cast<int>(int_in(need(j, "covariate_count", line), line));
    m.variant_ids = strings_in(need(j, "variant_ids", line), line);
    if (j.contains("error")) m.error = str_in(j["error"], line);
    if (m.site_id.empty()) bad(line, "empty site_id");
    return m;
  }
  if (type == "GLOBAL_UPDATE") {
    GlobalUpdateMessage m;
    m.round = static_cast<int>(int_in(need(j, "round", line), line));
    const json& updates = need(j, "updates", line);
    if (!updates.is_array()) bad(line, "updates must be an array");
    for (const json& e : updates) {
      SnpUpdate u;
      u.snp_id = str_in(need(e, "snp_id", line), line);
      u.iteration = static_cast<int>(int_in(need(e, "iteration", line), line));
      u.beta = vec_in(need(e, "beta", line), line);
      u.sigma2 = num_in(need(e, "sigma2", line), line);
      u.converged = bool_in(need(e, "converged", line), line);
      u.grad_global = vec_in(need(e, "grad_global", line), line);
      u.hess_global = mat_in(need(e, "hess_global", line), line);
      m.updates.push_back(std::move(u));
    }
    return m;
  }
  if (type == "LOCAL_STATS") {
    LocalStatsMessage m;
    m.site_id = str_in(need(j, "site_id", line), line);
    m.round = static_cast<int>(int_in(need(j, "round", line), line));
    const json& stats = need(j, "stats", line);
    if (!stats.is_array()) bad(line, "stats must be an array");
    for (const json& e : stats) {
      SnpStats s;
      s.stats.snp_id = str_in(need(e, "snp_id", line), line);
      s.stats.site_id = m.site_id;
      s.stats.n_i = int_in(need(e, "n_i", line), line);
      s.stats.payload = payload_in(need(e, "payload", line), line);
      if (e.contains("local_se")) s.stats.local_se = vec_in(e["local_se"], line);
      s.stats.hessian_singular = bool_in(need(e, "hessian_singular", line), line);
      s.stats.mu_converged = bool_in(need(e, "mu_converged", line), line);
      if (e.contains("noise_id")) s.noise_id = str_in(e["noise_id"], line);
      m.stats.push_back(std::move(s));
    }
    return m;
  }
  if (type == "FINALIZE") {
    FinalizeMessage m;
    const json& results = need(j, "results", line);
    if (!results.is_array()) bad(line, "results must be an array");
    for (const json& e : results) {
      SnpResult r;
      r.snp_id = str_in(need(e, "snp_id", line), line);
      r.has_stats = bool_in(need(e, "has_stats", line), line);
      if (r.has_stats) {
        r.beta = num_in(need(e, "beta", line), line);
        r.se = num_in(need(e, "se", line), line);
        r.z = num_in(need(e, "z", line), line);
        r.p_value = num_in(need(e, "p_value", line), line);
      }
      r.n_iterations = static_cast<int>(int_in(need(e, "n_iterations", line), line));
      r.converged = bool_in(need(e, "converged", line), line);
      r.sigma2 = num_in(need(e, "sigma2", line), line);
      if (e.contains("note")) r.note = str_in(e["note"], line);
      m.results.push_back(std::move(r));
    }
    return m;
  }
  if (type == "NOISE") {
    NoiseMessage m;
    if (j.contains("site_id")) m.site_id = str_in(j["site_id"], line);
    m.noise_id = str_in(need(j, "noise_id", line), line);
    m.payload = payload_in(need(j, "payload", line), line);
    if (j.contains("n_submissions")) {
      m.n_submissions = static_cast<int>(int_in(j["n_submissions"], line));
    }
    return m;
  }
  if (type == "SHUTDOWN") {
    ShutdownMessage m;
    m.complete = bool_in(need(j, "complete", line), line);
    return m;
  }
  bad(line, "unknown type '" + type + "'");
}

template <typename T>
T expect_message(const std::string& line) {
  AnyMessage any = parse_message(line);
  if (T* got = std::get_if<T>(&any)) return std::move(*got);
  throw ProtocolError(std::string("expected ") + kind_name(static_cast<MessageKind>(
                          AnyMessage(T{}).index())) +
                      ", got " + kind_name(kind_of(any)) + ": " + clip(line));
}

template InitMessage expect_message<InitMessage>(const std::string&);
template InitAckMessage expect_message<InitAckMessage>(const std::string&);
template GlobalUpdateMessage expect_message<GlobalUpdateMessage>(const std::string&);
template LocalStatsMessage expect_message<LocalStatsMessage>(const std::string&);
template FinalizeMessage expect_message<FinalizeMessage>(const std::string&);
template NoiseMessage expect_message<NoiseMessage>(const std::string&);
template ShutdownMessage expect_message<ShutdownMessage>(const std::string&);

}  // namespace fedglmm::fed
