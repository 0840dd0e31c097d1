#include "fedglmm/fed/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"

namespace fedglmm::fed {

namespace {

std::string errno_text() { return std::strerror(errno); }

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

class TcpChannel : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) { set_nodelay(fd_); }
  ~TcpChannel() override { close(); }

  void send_line(const std::string& line) override {
    std::string framed = line;
    framed.push_back('\n');
    std::size_t off = 0;
    while (off < framed.size()) {
      const ssize_t n = ::send(fd_, framed.data() + off, framed.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("send failed: " + errno_text());
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> recv_line() override {
    while (true) {
      const std::size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      char chunk[65536];
      const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("recv failed: " + errno_text());
      }
      if (n == 0) {
        if (!buf_.empty()) {
          FEDGLMM_WARN("discarding %zu unterminated bytes at connection close", buf_.size());
          buf_.clear();
        }
        return std::nullopt;
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace

Endpoint parse_endpoint(const std::string& spec) {
  const std::size_t colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= spec.size()) {
    throw ConfigError("expected host:port, got '" + spec + "'");
  }
  Endpoint ep;
  ep.host = spec.substr(0, colon);
  const std::string port_str = spec.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_str.c_str(), &end, 10);
  if (end == nullptr || *end != '\0' || port < 0 || port > 65535) {
    throw ConfigError("invalid port '" + port_str + "'");
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

ChannelPtr tcp_connect(const Endpoint& ep, int max_attempts, int retry_delay_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  const std::string port_str = std::to_string(ep.port);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(ep.host.c_str(), port_str.c_str(), &hints, &res);
    if (rc != 0) {
      throw TransportError("cannot resolve '" + ep.host + "': " + gai_strerror(rc));
    }
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        return std::make_shared<TcpChannel>(fd);
      }
      last_error = errno_text();
      ::close(fd);
    }
    ::freeaddrinfo(res);
    std::this_thread::sleep_for(std::chrono::milliseconds(retry_delay_ms));
  }
  throw TransportError("cannot connect to " + ep.host + ":" + port_str + " after " +
                       std::to_string(max_attempts) + " attempts: " + last_error);
}

TcpListener::TcpListener(const Endpoint& ep) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (ep.host.empty() || ep.host == "0.0.0.0" || ep.host == "*") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res);
    if (rc != 0 || res == nullptr) {
      ::close(fd_);
      throw TransportError("cannot resolve listen host '" + ep.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = errno_text();
    ::close(fd_);
    throw TransportError("bind to " + ep.host + ":" + std::to_string(ep.port) + ": " + err);
  }
  if (::listen(fd_, 64) != 0) {
    const std::string err = errno_text();
    ::close(fd_);
    throw TransportError("listen: " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) == 0) {
    port_ = ntohs(bound.sin_port);
  }
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

ChannelPtr TcpListener::accept() {
  while (true) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_shared<TcpChannel>(fd);
    if (errno == EINTR) continue;
    throw TransportError("accept: " + errno_text());
  }
}

}  // namespace fedglmm::fed
