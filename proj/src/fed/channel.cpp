#include "fedglmm/fed/channel.hpp"

#include "fedglmm/errors.hpp"
#include "fedglmm/fed/message.hpp"

namespace fedglmm::fed {

namespace detail {

void LineQueue::push(const std::string& line) {
  {
    std::lock_guard<std::mutex> lock(mu);
    if (closed) throw TransportError("peer closed the in-process channel");
    lines.push_back(line);
  }
  cv.notify_one();
}

std::optional<std::string> LineQueue::pop() {
  std::unique_lock<std::mutex> lock(mu);
  cv.wait(lock, [this] { return !lines.empty() || closed; });
  if (lines.empty()) return std::nullopt;
  std::string line = std::move(lines.front());
  lines.pop_front();
  return line;
}

void LineQueue::close() {
  {
    std::lock_guard<std::mutex> lock(mu);
    closed = true;
  }
  cv.notify_all();
}

}  // namespace detail

namespace {

class InProcessChannel : public Channel {
 public:
  InProcessChannel(std::shared_ptr<detail::LineQueue> out, std::shared_ptr<detail::LineQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  void send_line(const std::string& line) override { out_->push(line); }
  std::optional<std::string> recv_line() override { return in_->pop(); }
  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<detail::LineQueue> out_;
  std::shared_ptr<detail::LineQueue> in_;
};

}  // namespace

std::pair<ChannelPtr, ChannelPtr> make_inprocess_pair() {
  auto a_to_b = std::make_shared<detail::LineQueue>();
  auto b_to_a = std::make_shared<detail::LineQueue>();
  return {std::make_shared<InProcessChannel>(a_to_b, b_to_a),
          std::make_shared<InProcessChannel>(b_to_a, a_to_b)};
}

RecordingChannel::RecordingChannel(ChannelPtr inner, std::shared_ptr<Transcript> transcript,
                                   std::shared_ptr<std::mutex> mu)
    : inner_(std::move(inner)), transcript_(std::move(transcript)), mu_(std::move(mu)) {}

void RecordingChannel::send_line(const std::string& line) {
  {
    std::lock_guard<std::mutex> lock(*mu_);
    transcript_->push_back({true, line});
  }
  inner_->send_line(line);
}

std::optional<std::string> RecordingChannel::recv_line() {
  std::optional<std::string> line = inner_->recv_line();
  if (line) {
    std::lock_guard<std::mutex> lock(*mu_);
    transcript_->push_back({false, *line});
  }
  return line;
}

void RecordingChannel::close() { inner_->close(); }

CountingChannel::CountingChannel(ChannelPtr inner) : inner_(std::move(inner)) {}

void CountingChannel::tally(Counts& counts, const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("type")) return;
  const std::string type = j["type"].is_string() ? j["type"].get<std::string>() : "?";
  const auto per_snp = [&](const char* array_field, const char* id_field) {
    if (!j.contains(array_field) || !j[array_field].is_array()) return false;
    for (const json& e : j[array_field]) {
      const std::string id =
          e.is_object() && e.contains(id_field) && e[id_field].is_string()
              ? e[id_field].get<std::string>()
              : "";
      counts[{type, id}] += 1;
    }
    return true;
  };
  std::lock_guard<std::mutex> lock(mu_);
  if (type == "GLOBAL_UPDATE" && per_snp("updates", "snp_id")) return;
  if (type == "LOCAL_STATS" && per_snp("stats", "snp_id")) return;
  if (type == "FINALIZE" && per_snp("results", "snp_id")) return;
  counts[{type, ""}] += 1;
}

void CountingChannel::send_line(const std::string& line) {
  tally(sent_, line);
  inner_->send_line(line);
}

std::optional<std::string> CountingChannel::recv_line() {
  std::optional<std::string> line = inner_->recv_line();
  if (line) tally(received_, *line);
  return line;
}

void CountingChannel::close() { inner_->close(); }

CountingChannel::Counts CountingChannel::sent() const {
  std::lock_guard<std::mutex> lock(mu_);
  return sent_;
}

CountingChannel::Counts CountingChannel::received() const {
  std::lock_guard<std::mutex> lock(mu_);
  return received_;
}

DroppingChannel::DroppingChannel(ChannelPtr inner, std::function<bool(const std::string&)> drop_if)
    : inner_(std::move(inner)), drop_if_(std::move(drop_if)) {}

void DroppingChannel::send_line(const std::string& line) {
  if (drop_if_ && drop_if_(line)) return;
  inner_->send_line(line);
}

std::optional<std::string> DroppingChannel::recv_line() { return inner_->recv_line(); }

void DroppingChannel::close() { inner_->close(); }

}  // namespace fedglmm::fed
