#pragma once

// Small POSIX TCP helpers shared by the adaptation service, the realtime
// client and the demo bridge.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>
#include <string>
#include <utility>

#include "alvi/error.hpp"
#include "alvi/wire.hpp"

namespace alvi::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
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

 private:
  int fd_ = -1;
};

[[noreturn]] inline void sys_fail(const std::string& what) { fail(ErrorCode::io, what + ": " + std::strerror(errno)); }

inline void set_nonblocking(int fd, bool on = true) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK)) < 0) sys_fail("fcntl");
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

/// Listening socket on the loopback or any interface. Port 0 picks a free port.
inline Socket listen_tcp(std::uint16_t port, bool loopback_only = false, int backlog = 16) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) sys_fail("socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(loopback_only ? INADDR_LOOPBACK : INADDR_ANY);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) sys_fail("bind port " + std::to_string(port));
  if (::listen(s.fd(), backlog) < 0) sys_fail("listen");
  return s;
}

inline std::uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) < 0) sys_fail("getsockname");
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
    fail(ErrorCode::io, "resolve " + host + ": " + ::gai_strerror(rc));
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    sys_fail("socket");
  }
  const int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0) sys_fail("connect " + host + ":" + std::to_string(port));
  set_nodelay(s.fd());
  return s;
}

inline Socket accept_tcp(int listen_fd) {
  const int fd = ::accept(listen_fd, nullptr, nullptr);
  if (fd < 0) {
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return Socket();
    sys_fail("accept");
  }
  set_nodelay(fd);
  return Socket(fd);
}

/// Blocking write of the whole buffer. Returns false if the peer went away.
inline bool send_all(int fd, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd pfd{fd, POLLOUT, 0};
        ::poll(&pfd, 1, 1000);
        continue;
      }
      return false;
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

inline bool send_message(int fd, const Message& m) {
  const Bytes b = encode_message(m);
  return send_all(fd, b.data(), b.size());
}

/// Read whatever is available. Returns 0 on orderly close, -1 on would-block.
inline ssize_t read_some(int fd, Bytes& buf, std::size_t max = 65536) {
  std::uint8_t tmp[65536];
  for (;;) {
    const ssize_t k = ::recv(fd, tmp, std::min(max, sizeof tmp), 0);
    if (k > 0) buf.insert(buf.end(), tmp, tmp + k);
    if (k >= 0) return k;
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return -1;
    return 0;
  }
}

/// Blocking read of the next complete message, or nullopt when the peer closes
/// or the timeout (milliseconds, negative = forever) expires.
inline std::optional<Message> recv_message(int fd, FrameReader& reader, int timeout_ms = -1, bool* closed = nullptr) {
  if (closed) *closed = false;
  for (;;) {
    if (auto m = reader.next()) return m;
    pollfd pfd{fd, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc == 0) return std::nullopt;
    if (rc < 0) {
      if (errno == EINTR) continue;
      sys_fail("poll");
    }
    Bytes buf;
    const ssize_t k = read_some(fd, buf);
    if (k == 0) {
      if (closed) *closed = true;
      return std::nullopt;
    }
    if (k > 0) reader.feed(buf);
  }
}

}  // namespace alvi::net
