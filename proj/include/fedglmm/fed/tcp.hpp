#pragma once

// POSIX TCP transport carrying the newline-delimited JSON protocol.

#include <cstdint>
#include <memory>
#include <string>

#include "fedglmm/fed/channel.hpp"

namespace fedglmm::fed {

// Parses "host:port"; throws ConfigError on malformed input.
struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
Endpoint parse_endpoint(const std::string& spec);

// Connects with bounded retries (the peer may still be starting up).
ChannelPtr tcp_connect(const Endpoint& ep, int max_attempts = 50,
                       int retry_delay_ms = 100);

class TcpListener {
 public:
  // Binds and listens; port 0 picks an ephemeral port.
  explicit TcpListener(const Endpoint& ep);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  ChannelPtr accept();
  std::uint16_t local_port() const { return port_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace fedglmm::fed
