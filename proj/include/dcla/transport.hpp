#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dcla/wire.hpp"

namespace dcla {

class ChannelClosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered, reliable, one-directional message pipe.
class MessageChannel {
 public:
  virtual ~MessageChannel() = default;
  virtual void send(const Frame& frame) = 0;
  // nullopt on timeout; throws ChannelClosed once closed and drained.
  virtual std::optional<Frame> receive(std::chrono::microseconds timeout) = 0;
  virtual void close() = 0;
};

class InProcessChannel final : public MessageChannel {
 public:
  void send(const Frame& frame) override {
    {
      std::lock_guard lock(mu_);
      if (closed_) throw ChannelClosed("send on closed channel");
      queue_.push_back(frame);
    }
    cv_.notify_one();
  }

  std::optional<Frame> receive(std::chrono::microseconds timeout) override {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; })) return std::nullopt;
    if (queue_.empty()) throw ChannelClosed("channel closed");
    Frame f = std::move(queue_.front());
    queue_.pop_front();
    return f;
  }

  void close() override {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> queue_;
  bool closed_ = false;
};

// --- TCP ---------------------------------------------------------------------

class TcpChannel final : public MessageChannel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void send(const Frame& frame) override {
    const auto bytes = encode_frame(frame);
    std::lock_guard lock(send_mu_);
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ChannelClosed(std::string("tcp send failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<Frame> receive(std::chrono::microseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      std::size_t used = 0;
      if (auto f = decode_frame(rx_, used)) {
        rx_.erase(rx_.begin(), rx_.begin() + static_cast<std::ptrdiff_t>(used));
        return f;
      }
      if (eof_) throw ChannelClosed("tcp peer closed");
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      pollfd p{fd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, static_cast<int>(std::max<long long>(left.count(), 0)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ChannelClosed(std::string("tcp poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) return std::nullopt;
      std::uint8_t buf[65536];
      const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ChannelClosed(std::string("tcp recv failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        eof_ = true;
        continue;
      }
      rx_.insert(rx_.end(), buf, buf + n);
    }
  }

  void close() override {
    std::lock_guard lock(send_mu_);
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  std::mutex send_mu_;
  std::vector<std::uint8_t> rx_;
  bool eof_ = false;
};

class TcpListener {
 public:
  // port 0 picks an ephemeral port on the loopback interface.
  explicit TcpListener(std::uint16_t port = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd_, 4) < 0) {
      ::close(fd_);
      throw std::runtime_error(std::string("tcp listen failed: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }

  std::unique_ptr<TcpChannel> accept() {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) throw std::runtime_error(std::string("tcp accept failed: ") + std::strerror(errno));
    return std::make_unique<TcpChannel>(c);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Connects to 127.0.0.1:port, retrying with exponential backoff.
inline std::unique_ptr<TcpChannel> tcp_connect(std::uint16_t port, int attempts = 8,
                                               std::chrono::milliseconds backoff = std::chrono::milliseconds(5)) {
  for (int i = 0; i < attempts; ++i) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) return std::make_unique<TcpChannel>(fd);
    ::close(fd);
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
  throw ChannelClosed("tcp connect to port " + std::to_string(port) + " failed");
}

// A connected loopback pair: first end sends, second receives (or vice versa).
inline std::pair<std::unique_ptr<TcpChannel>, std::unique_ptr<TcpChannel>> tcp_loopback_pair() {
  TcpListener listener;
  std::unique_ptr<TcpChannel> client;
  std::thread t([&] { client = tcp_connect(listener.port()); });
  auto server = listener.accept();
  t.join();
  return {std::move(client), std::move(server)};
}

}  // namespace dcla
