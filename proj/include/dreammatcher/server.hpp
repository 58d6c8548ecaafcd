#pragma once

// TCP transport for the step protocol (POSIX sockets). One thread and one
// ProtocolSession per connection; sessions share nothing but the id counter.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "dreammatcher/protocol.hpp"

namespace dm::wire {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  void close() noexcept {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }

  void send_all(std::span<const std::uint8_t> bytes) const {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      require(n > 0, ErrorKind::io, std::string("send failed: ") + std::strerror(errno));
      sent += static_cast<std::size_t>(n);
    }
  }

  /// 0 on orderly shutdown by the peer.
  std::size_t receive(std::span<std::uint8_t> buffer) const {
    while (true) {
      const ssize_t n = ::recv(fd_, buffer.data(), buffer.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      require(n >= 0, ErrorKind::io, std::string("recv failed: ") + std::strerror(errno));
      return static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_ = -1;
};

inline sockaddr_in make_address(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  require(::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, ErrorKind::config,
          "not an IPv4 address: " + host);
  return addr;
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  require(s.valid(), ErrorKind::io, "socket() failed");
  const sockaddr_in addr = make_address(host, port);
  require(::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0, ErrorKind::io,
          "cannot connect to " + host + ":" + std::to_string(port));
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Blocking frame exchange over a connected socket.
class FrameChannel {
 public:
  explicit FrameChannel(const Socket& socket) : socket_(socket) {}

  void send(const Frame& f) { socket_.send_all(encode_frame(f)); }

  /// Next frame, or nullopt once the peer has closed the stream.
  std::optional<Frame> receive() {
    std::array<std::uint8_t, 64 * 1024> buf{};
    while (true) {
      if (auto f = reader_.next()) return f;
      const std::size_t n = socket_.receive(buf);
      if (n == 0) return std::nullopt;
      reader_.feed(std::span(buf.data(), n));
    }
  }

 private:
  const Socket& socket_;
  FrameReader reader_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::size_t max_sessions = 0;  // 0: unlimited
};

class Server {
 public:
  explicit Server(ServerOptions options) : options_(std::move(options)) {
    listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    require(listener_.valid(), ErrorKind::io, "socket() failed");
    const int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = make_address(options_.host, options_.port);
    require(::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0, ErrorKind::io,
            "cannot bind " + options_.host + ":" + std::to_string(options_.port) + ": " + std::strerror(errno));
    require(::listen(listener_.fd(), 16) == 0, ErrorKind::io, "listen() failed");
    socklen_t len = sizeof addr;
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~Server() {
    stop();
    std::list<std::jthread> workers;
    {
      std::lock_guard lock(mutex_);
      workers.swap(workers_);
    }
  }

  std::uint16_t port() const noexcept { return port_; }
  std::size_t active_sessions() const noexcept { return active_.load(); }

  /// Accepts connections until stop() is called.
  void run() {
    while (!stopping_.load()) {
      pollfd pfd{listener_.fd(), POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      if (ready <= 0) continue;
      Socket client(::accept(listener_.fd(), nullptr, nullptr));
      if (!client.valid()) continue;
      const int one = 1;
      ::setsockopt(client.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      const std::uint64_t id = next_id_.fetch_add(1);
      std::lock_guard lock(mutex_);
      open_fds_.insert(client.fd());
      workers_.emplace_back([this, id, c = std::move(client)]() mutable { serve_connection(id, std::move(c)); });
    }
  }

  /// Stops accepting and unblocks every open connection.
  void stop() noexcept {
    stopping_.store(true);
    std::lock_guard lock(mutex_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }

 private:
  void serve_connection(std::uint64_t id, Socket client) {
    const std::size_t before = active_.fetch_add(1);
    const bool admitted = options_.max_sessions == 0 || before < options_.max_sessions;
    ProtocolSession session(id);
    FrameChannel channel(client);
    try {
      if (!admitted) {
        for (const auto& f : session.abort(ErrorCode::session_state, "server is at its session limit")) channel.send(f);
      }
      while (!session.closed() && !stopping_.load()) {
        std::optional<Frame> in;
        try {
          in = channel.receive();
        } catch (const WireError& e) {
          for (const auto& f : session.abort(e.code(), e.what())) channel.send(f);
          break;
        }
        if (!in) break;  // client went away: the session ends here
        for (const auto& f : session.handle(*in)) channel.send(f);
      }
    } catch (const Error&) {
      // Transport failure; nothing left to tell the client.
    }
    {
      std::lock_guard lock(mutex_);
      open_fds_.erase(client.fd());
    }
    ::shutdown(client.fd(), SHUT_RDWR);
    active_.fetch_sub(1);
  }

  ServerOptions options_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> next_id_{1};
  std::atomic<std::size_t> active_{0};
  std::mutex mutex_;
  std::set<int> open_fds_;
  std::list<std::jthread> workers_;
};

}  // namespace dm::wire
