#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "rfspmd/comm.hpp"
#include "rfspmd/error.hpp"

namespace rfspmd {
namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return left.count() < 0 ? 0 : static_cast<int>(std::min<long long>(left.count(), 1 << 30));
}

// Waits for `events` on fd; false on timeout.
bool wait_fd(int fd, short events, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw TransportError(errno_text("poll"));
  }
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Reads exactly n bytes. Returns false on a clean EOF before any byte.
bool read_all(int fd, std::uint8_t* data, std::size_t n, Clock::time_point deadline,
              const std::string& who) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_fd(fd, POLLIN, deadline)) {
      throw ProtocolError("timed out waiting for " + who);
    }
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("recv"));
    }
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("connection to " + who + " closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

Frame read_frame(int fd, Clock::time_point deadline, const std::string& who) {
  std::uint8_t header[kFrameHeaderSize];
  if (!read_all(fd, header, kFrameHeaderSize, deadline, who)) {
    throw TransportError("connection to " + who + " closed");
  }
  std::uint32_t length = 0;
  for (int i = 0; i < 4; ++i) length |= std::uint32_t{header[i]} << (8 * i);
  Bytes raw(header, header + kFrameHeaderSize);
  raw.resize(kFrameHeaderSize + length);
  if (length > 0 && !read_all(fd, raw.data() + kFrameHeaderSize, length, deadline, who)) {
    throw TransportError("connection to " + who + " closed mid-frame");
  }
  return decode_frame(raw);
}

void write_frame(int fd, const Frame& frame) {
  const Bytes raw = encode_frame(frame);
  write_all(fd, raw.data(), raw.size());
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Bytes hello_payload(std::size_t rank) {
  Bytes out(4);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(rank >> (8 * i));
  return out;
}

// Star links: rank 0 holds one socket per peer, a peer holds one socket to
// rank 0 (stored at index 0).
class SocketTransport final : public Transport {
 public:
  SocketTransport(std::size_t rank, std::size_t size, std::vector<int> fds)
      : rank_(rank), size_(size), fds_(std::move(fds)) {}
  ~SocketTransport() override { close(); }

  std::size_t rank() const override { return rank_; }
  std::size_t size() const override { return size_; }

  void send(std::size_t peer, const Frame& frame) override {
    write_frame(fd_for(peer), frame);
  }

  Frame recv(std::size_t peer, std::chrono::milliseconds timeout) override {
    const std::string who = "rank " + std::to_string(peer);
    try {
      return read_frame(fd_for(peer), Clock::now() + timeout, who);
    } catch (const ProtocolError& e) {
      throw ProtocolError("rank " + std::to_string(rank_) + ": " + e.what() + " after " +
                          std::to_string(timeout.count()) + " ms");
    }
  }

  void abort(const std::string& reason) noexcept override {
    if (aborted_) return;
    aborted_ = true;
    // A bye frame with a non-empty payload carries the abort reason.
    const std::string text = reason.empty() ? std::string("aborted") : reason;
    const Frame frame{Tag::kBye, 0, Bytes(text.begin(), text.end())};
    for (std::size_t p = 0; p < fds_.size(); ++p) {
      if (fds_[p] < 0) continue;
      try {
        write_frame(fds_[p], frame);
      } catch (...) {
      }
      ::shutdown(fds_[p], SHUT_WR);
    }
  }

  void close() override {
    for (int& fd : fds_) {
      if (fd >= 0) ::close(fd);
      fd = -1;
    }
  }

 private:
  int fd_for(std::size_t peer) const {
    const std::size_t slot = rank_ == 0 ? peer : 0;
    if (peer >= size_ || peer == rank_ || (rank_ != 0 && peer != 0)) {
      throw InvalidArgument("socket transport: no link from rank " + std::to_string(rank_) +
                            " to rank " + std::to_string(peer));
    }
    if (fds_[slot] < 0) throw TransportError("socket transport: link closed");
    return fds_[slot];
  }

  std::size_t rank_;
  std::size_t size_;
  std::vector<int> fds_;
  bool aborted_ = false;
};

}  // namespace

// ---------------------------------------------------------------------------

Listener::Listener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw InvalidArgument("Listener: not an IPv4 address: " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 128) < 0) {
    const std::string err = errno_text("bind/listen");
    ::close(fd_);
    throw TransportError(err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Listener Listener::adopt(int fd) {
  Listener l{Adopted{}};
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    throw TransportError(errno_text("inherited listen socket"));
  }
  ::fcntl(fd, F_SETFD, FD_CLOEXEC);
  l.fd_ = fd;
  l.port_ = ntohs(addr.sin_port);
  return l;
}

Listener::Listener(Listener&& other) noexcept : fd_(other.fd_), port_(other.port_) { other.fd_ = -1; }

Listener& Listener::operator=(Listener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    port_ = other.port_;
    other.fd_ = -1;
  }
  return *this;
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

int Listener::release() {
  const int fd = fd_;
  fd_ = -1;
  return fd;
}

std::unique_ptr<Transport> accept_socket_group(Listener listener, std::size_t size,
                                               std::chrono::milliseconds timeout) {
  if (size == 0) throw InvalidArgument("accept_socket_group: size must be >= 1");
  const auto deadline = Clock::now() + timeout;
  std::vector<int> fds(size, -1);
  auto cleanup = [&] {
    for (int fd : fds) {
      if (fd >= 0) ::close(fd);
    }
  };
  try {
    for (std::size_t joined = 1; joined < size; ++joined) {
      if (!wait_fd(listener.fd(), POLLIN, deadline)) {
        throw ProtocolError("rendezvous timed out: " + std::to_string(joined - 1) + " of " +
                            std::to_string(size - 1) + " peers connected");
      }
      const int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (errno == EINTR) {
          --joined;
          continue;
        }
        throw TransportError(errno_text("accept"));
      }
      set_nodelay(fd);
      Frame hello;
      try {
        hello = read_frame(fd, deadline, "a connecting peer");
      } catch (...) {
        ::close(fd);
        throw;
      }
      std::uint32_t peer = 0;
      if (hello.tag != Tag::kHello || hello.payload.size() != 4) {
        ::close(fd);
        throw ProtocolError("rendezvous: expected a hello frame");
      }
      for (int i = 0; i < 4; ++i) peer |= std::uint32_t{hello.payload[i]} << (8 * i);
      if (peer == 0 || peer >= size || fds[peer] >= 0) {
        ::close(fd);
        throw ProtocolError("rendezvous: invalid or duplicate rank " + std::to_string(peer));
      }
      fds[peer] = fd;
    }
  } catch (...) {
    cleanup();
    throw;
  }
  return std::make_unique<SocketTransport>(0, size, std::move(fds));
}

std::unique_ptr<Transport> connect_socket_group(const std::string& host, std::uint16_t port,
                                                std::size_t rank, std::size_t size,
                                                std::chrono::milliseconds timeout) {
  if (rank == 0 || rank >= size) {
    throw InvalidArgument("connect_socket_group: rank " + std::to_string(rank) +
                          " invalid for size " + std::to_string(size));
  }
  const auto deadline = Clock::now() + timeout;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw InvalidArgument("connect_socket_group: not an IPv4 address: " + host);
  }
  auto delay = std::chrono::milliseconds(5);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw TransportError(errno_text("socket"));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      set_nodelay(fd);
      try {
        write_frame(fd, Frame{Tag::kHello, 0, hello_payload(rank)});
      } catch (...) {
        ::close(fd);
        throw;
      }
      std::vector<int> fds(1, fd);
      return std::make_unique<SocketTransport>(rank, size, std::move(fds));
    }
    const int err = errno;
    ::close(fd);
    if (err != ECONNREFUSED && err != EINTR && err != ECONNRESET) {
      errno = err;
      throw TransportError(errno_text("connect"));
    }
    if (Clock::now() + delay >= deadline) {
      throw ProtocolError("rendezvous timed out connecting to " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, std::chrono::milliseconds(200));
  }
}

namespace {

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::size_t env_count(const char* name, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw InvalidArgument(std::string("bad value for ") + name + ": " + text);
  }
}

}  // namespace

Communicator Communicator::from_environment() {
  const auto size_text = env(kEnvSize);
  if (!size_text) return self();
  const std::size_t size = env_count(kEnvSize, *size_text);
  const auto rank_text = env(kEnvRank);
  if (!rank_text) throw InvalidArgument(std::string(kEnvRank) + " is not set");
  const std::size_t rank = env_count(kEnvRank, *rank_text);
  if (size == 0 || rank >= size) throw InvalidArgument("launcher environment has rank >= size");
  std::chrono::milliseconds timeout = kDefaultCommTimeout;
  if (auto t = env(kEnvTimeoutMs)) timeout = std::chrono::milliseconds(env_count(kEnvTimeoutMs, *t));
  if (size == 1) return self();

  const auto addr = env(kEnvAddr);
  if (!addr) throw InvalidArgument(std::string(kEnvAddr) + " is not set");
  const auto colon = addr->rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("bad rendezvous address: " + *addr);
  const std::string host = addr->substr(0, colon);
  const auto port = static_cast<std::uint16_t>(env_count(kEnvAddr, addr->substr(colon + 1)));

  if (rank == 0) {
    Listener listener = [&] {
      if (auto fd = env(kEnvListenFd)) return Listener::adopt(static_cast<int>(env_count(kEnvListenFd, *fd)));
      return Listener(host, port);
    }();
    return Communicator(accept_socket_group(std::move(listener), size, timeout), timeout);
  }
  return Communicator(connect_socket_group(host, port, rank, size, timeout), timeout);
}

}  // namespace rfspmd
