#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "pvrnn/error.hpp"
#include "pvrnn/service/framing.hpp"

namespace pvrnn::net {

/// Owning TCP socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  /// Blocks until every byte is written. Returns false once the peer is gone.
  bool send_all(std::string_view data) {
    while (!data.empty()) {
      const ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
  }

  /// Waits up to `timeout_ms` for data. nullopt: timeout; empty string: the
  /// peer closed the connection.
  std::optional<std::string> recv_some(int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, timeout_ms);
    if (r == 0) return std::nullopt;
    if (r < 0) return errno == EINTR ? std::nullopt : std::optional<std::string>(std::string());
    char buf[4096];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n <= 0) return std::string();
    return std::string(buf, static_cast<std::size_t>(n));
  }

 private:
  int fd_ = -1;
};

inline sockaddr_in resolve(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (host == "localhost") {
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("service.host must be an IPv4 address: " + host);
  }
  return addr;
}

inline Socket listen_tcp(const std::string& host, int port, int backlog = 8) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw Error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const auto addr = resolve(host, port);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    throw Error("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
  return s;
}

inline int bound_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

/// Waits up to `timeout_ms` for a client.
inline std::optional<Socket> accept_for(const Socket& listener, int timeout_ms) {
  pollfd p{listener.fd(), POLLIN, 0};
  if (::poll(&p, 1, timeout_ms) <= 0) return std::nullopt;
  const int fd = ::accept(listener.fd(), nullptr, nullptr);
  if (fd < 0) return std::nullopt;
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return Socket(fd);
}

inline Socket connect_tcp(const std::string& host, int port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw Error(std::string("socket: ") + std::strerror(errno));
  const auto addr = resolve(host, port);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    throw Error("connect " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

/// Message-oriented view of a server-side connection. The transport is chosen
/// from the first bytes: an HTTP "GET " starts a websocket handshake, anything
/// else is read as length-prefixed frames.
class Channel {
 public:
  explicit Channel(Socket s) : sock_(std::move(s)) {}

  bool closed() const { return closed_; }
  bool is_websocket() const { return mode_ == Mode::websocket; }
  Socket& socket() { return sock_; }

  bool send(std::string_view text) {
    if (closed_) return false;
    const std::string frame =
        mode_ == Mode::websocket ? framing::encode_websocket(text) : framing::encode_length_prefixed(text);
    std::lock_guard<std::mutex> lock(send_mu_);
    if (!sock_.send_all(frame)) closed_ = true;
    return !closed_;
  }

  /// Blocks until the transport is known (websocket handshake done) or the
  /// peer closes. Returns false if the connection ended first.
  bool handshake(int timeout_ms) {
    while (mode_ == Mode::unknown && !closed_) {
      auto bytes = sock_.recv_some(timeout_ms);
      if (!bytes) return false;
      if (bytes->empty()) {
        closed_ = true;
        return false;
      }
      pending_ += *bytes;
      detect();
    }
    return !closed_;
  }

  /// Next complete text message, waiting up to `timeout_ms`. nullopt on
  /// timeout or close (check `closed()`).
  std::optional<std::string> recv(int timeout_ms) {
    if (auto m = pop()) return m;
    if (closed_) return std::nullopt;
    auto bytes = sock_.recv_some(timeout_ms);
    if (!bytes) return std::nullopt;
    if (bytes->empty()) {
      closed_ = true;
      return std::nullopt;
    }
    pending_ += *bytes;
    if (mode_ == Mode::unknown) detect();
    return pop();
  }

 private:
  enum class Mode { unknown, length_prefixed, websocket };

  void detect() {
    if (pending_.size() < 4) return;
    if (pending_.compare(0, 4, "GET ") != 0) {
      mode_ = Mode::length_prefixed;
      lp_.feed(pending_);
      pending_.clear();
      return;
    }
    const auto end = pending_.find("\r\n\r\n");
    if (end == std::string::npos) {
      if (pending_.size() > 16384) closed_ = true;
      return;
    }
    const auto key = framing::websocket_key(std::string_view(pending_).substr(0, end + 4));
    if (!key) {
      sock_.send_all("HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n");
      closed_ = true;
      return;
    }
    sock_.send_all(framing::websocket_handshake_response(*key));
    mode_ = Mode::websocket;
    ws_.feed(std::string_view(pending_).substr(end + 4));
    pending_.clear();
  }

  std::optional<std::string> pop() {
    if (!pending_.empty()) {
      if (mode_ == Mode::length_prefixed) {
        lp_.feed(pending_);
        pending_.clear();
      } else if (mode_ == Mode::websocket) {
        ws_.feed(pending_);
        pending_.clear();
      }
    }
    if (mode_ == Mode::length_prefixed) return lp_.next();
    if (mode_ != Mode::websocket) return std::nullopt;
    while (auto f = ws_.next()) {
      switch (f->op) {
        case framing::WsOpcode::text:
        case framing::WsOpcode::binary:
          return std::move(f->payload);
        case framing::WsOpcode::ping: {
          std::lock_guard<std::mutex> lock(send_mu_);
          sock_.send_all(framing::encode_websocket(f->payload, framing::WsOpcode::pong));
          break;
        }
        case framing::WsOpcode::close: {
          std::lock_guard<std::mutex> lock(send_mu_);
          sock_.send_all(framing::encode_websocket("", framing::WsOpcode::close));
          closed_ = true;
          return std::nullopt;
        }
        default:
          break;
      }
    }
    return std::nullopt;
  }

  Socket sock_;
  Mode mode_ = Mode::unknown;
  std::string pending_;
  framing::LengthPrefixedDecoder lp_;
  framing::WebSocketDecoder ws_;
  std::mutex send_mu_;
  std::atomic<bool> closed_{false};
};

/// Client side of the length-prefixed transport (headless clients, tests).
class Client {
 public:
  Client(const std::string& host, int port) : sock_(connect_tcp(host, port)) {}

  bool send(std::string_view text) { return sock_.send_all(framing::encode_length_prefixed(text)); }

  /// Next complete message, reading until `timeout_ms` has elapsed.
  std::optional<std::string> recv(int timeout_ms) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
      if (auto m = dec_.next()) return m;
      if (closed_) return std::nullopt;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) return std::nullopt;
      auto bytes = sock_.recv_some(static_cast<int>(left));
      if (!bytes) return std::nullopt;
      if (bytes->empty()) {
        closed_ = true;
        return std::nullopt;
      }
      dec_.feed(*bytes);
    }
  }

  bool closed() const { return closed_; }
  void close() { sock_.close(); }

 private:
  Socket sock_;
  framing::LengthPrefixedDecoder dec_;
  bool closed_ = false;
};

}  // namespace pvrnn::net
