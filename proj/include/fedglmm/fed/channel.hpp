#pragma once

// Line-oriented bidirectional channels. The in-process flavor is a pair of
// blocking string queues; TCP lives in tcp.hpp. Wrappers record or count
// traffic for tests without touching the endpoints.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedglmm::fed {

class Channel {
 public:
  virtual ~Channel() = default;
  // Sends one message line (no trailing newline). Throws TransportError if
  // the peer is gone.
  virtual void send_line(const std::string& line) = 0;
  // Blocks for the next line; nullopt means the peer closed.
  virtual std::optional<std::string> recv_line() = 0;
  virtual void close() = 0;
};

using ChannelPtr = std::shared_ptr<Channel>;

namespace detail {

struct LineQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> lines;
  bool closed = false;

  void push(const std::string& line);
  std::optional<std::string> pop();
  void close();
};

}  // namespace detail

// Creates the two endpoints of an in-process duplex pipe.
std::pair<ChannelPtr, ChannelPtr> make_inprocess_pair();

// Forwards to an inner channel while appending every line, tagged by
// direction, to a shared transcript.
class RecordingChannel : public Channel {
 public:
  struct Entry {
    bool outgoing;
    std::string line;
  };
  using Transcript = std::vector<Entry>;

  RecordingChannel(ChannelPtr inner, std::shared_ptr<Transcript> transcript,
                   std::shared_ptr<std::mutex> mu);
  void send_line(const std::string& line) override;
  std::optional<std::string> recv_line() override;
  void close() override;

 private:
  ChannelPtr inner_;
  std::shared_ptr<Transcript> transcript_;
  std::shared_ptr<std::mutex> mu_;
};

// Tallies per-SNP entry counts by message type, for protocol accounting
// tests. Counting keys are (type, snp_id) pairs; envelope messages count
// once per contained entry.
class CountingChannel : public Channel {
 public:
  using Counts = std::map<std::pair<std::string, std::string>, long>;

  explicit CountingChannel(ChannelPtr inner);
  void send_line(const std::string& line) override;
  std::optional<std::string> recv_line() override;
  void close() override;

  Counts sent() const;
  Counts received() const;

 private:
  void tally(Counts& counts, const std::string& line);

  ChannelPtr inner_;
  mutable std::mutex mu_;
  Counts sent_;
  Counts received_;
};

// Drops outgoing lines matching a predicate; for failure-injection tests.
class DroppingChannel : public Channel {
 public:
  DroppingChannel(ChannelPtr inner, std::function<bool(const std::string&)> drop_if);
  void send_line(const std::string& line) override;
  std::optional<std::string> recv_line() override;
  void close() override;

 private:
  ChannelPtr inner_;
  std::function<bool(const std::string&)> drop_if_;
};

}  // namespace fedglmm::fed
