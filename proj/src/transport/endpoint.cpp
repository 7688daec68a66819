// SPDX-License-Identifier: Apache-2.0

#include "mpsl/transport/endpoint.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "mpsl/errors.hpp"

namespace mpsl::transport {

void Endpoint::send(const Frame& f) {
  std::vector<std::uint8_t> bytes = encode_frame(f);
  if (ledger_) ledger_->record(client_, send_dir_, f, bytes);
  send_bytes(std::move(bytes));
}

Frame Endpoint::recv() {
  Frame f = recv_frame();
  if (ledger_ && record_receives_) {
    const Direction dir = send_dir_ == Direction::kUplink ? Direction::kDownlink : Direction::kUplink;
    ledger_->record(f.client_id, dir, f, encode_frame(f));
  }
  return f;
}

Frame Endpoint::expect(MsgType type) {
  Frame f = recv();
  if (f.type == MsgType::kAbort) {
    throw ProtocolError("peer aborted: " + std::string(f.payload.begin(), f.payload.end()));
  }
  if (f.type != type) {
    throw ProtocolError(std::string("expected ") + to_string(type) + " frame, got " + to_string(f.type));
  }
  return f;
}

ChannelEndpoint::ChannelEndpoint(ByteLedger* ledger, std::uint32_t client, Direction send_dir,
                                 std::shared_ptr<detail::Queue> in, std::shared_ptr<detail::Queue> out,
                                 std::chrono::milliseconds timeout)
    : Endpoint(ledger, client, send_dir), in_(std::move(in)), out_(std::move(out)), timeout_(timeout) {}

ChannelEndpoint::~ChannelEndpoint() { close(); }

void ChannelEndpoint::close() {
  for (auto* q : {in_.get(), out_.get()}) {
    std::lock_guard lock(q->mu);
    q->closed = true;
    q->cv.notify_all();
  }
}

void ChannelEndpoint::send_bytes(std::vector<std::uint8_t> bytes) {
  std::lock_guard lock(out_->mu);
  if (out_->closed) throw TransportError("channel closed");
  out_->items.push_back(std::move(bytes));
  out_->cv.notify_all();
}

Frame ChannelEndpoint::recv_frame() {
  std::unique_lock lock(in_->mu);
  if (!in_->cv.wait_for(lock, timeout_, [&] { return !in_->items.empty() || in_->closed; })) {
    throw TransportError("channel receive timed out");
  }
  if (in_->items.empty()) throw TransportError("channel closed");
  std::vector<std::uint8_t> bytes = std::move(in_->items.front());
  in_->items.pop_front();
  lock.unlock();
  return decode_frame(bytes);
}

EndpointPair channel_pair(ByteLedger* ledger, std::uint32_t client, std::chrono::milliseconds timeout) {
  auto up = std::make_shared<detail::Queue>();
  auto down = std::make_shared<detail::Queue>();
  EndpointPair p;
  p.client = std::make_unique<ChannelEndpoint>(ledger, client, Direction::kUplink, down, up, timeout);
  p.server = std::make_unique<ChannelEndpoint>(ledger, client, Direction::kDownlink, up, down, timeout);
  return p;
}

namespace {

std::string errno_text() { return std::strerror(errno); }

void set_timeouts(int fd, std::chrono::milliseconds t) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(t.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((t.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw TransportError("cannot resolve host '" + host + "'");
  }
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

constexpr std::chrono::milliseconds kIoTimeout{std::chrono::minutes(5)};

}  // namespace

TcpEndpoint::TcpEndpoint(int fd, ByteLedger* ledger, std::uint32_t client, Direction send_dir)
    : Endpoint(ledger, client, send_dir), fd_(fd) {
  set_timeouts(fd_, kIoTimeout);
}

TcpEndpoint::~TcpEndpoint() { close(); }

void TcpEndpoint::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

void TcpEndpoint::send_bytes(std::vector<std::uint8_t> bytes) {
  if (fd_ < 0) throw TransportError("tcp endpoint closed");
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError("tcp send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

void TcpEndpoint::read_exact(std::uint8_t* dst, std::size_t n, std::size_t offset) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
    if (r == 0) throw TransportError("connection closed by peer after " + std::to_string(offset + got) + " bytes of frame");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError("tcp receive failed: " + errno_text());
    }
    got += static_cast<std::size_t>(r);
  }
}

Frame TcpEndpoint::recv_frame() {
  if (fd_ < 0) throw TransportError("tcp endpoint closed");
  std::uint8_t header[kHeaderSize];
  read_exact(header, kHeaderSize, 0);
  const HeaderInfo h = decode_header(header);
  Frame f;
  f.type = h.type;
  f.round = h.round;
  f.client_id = h.client_id;
  f.payload.resize(h.payload_len);
  read_exact(f.payload.data(), f.payload.size(), kHeaderSize);
  return f;
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string msg = errno_text();
    ::close(fd_);
    throw TransportError("cannot bind " + host + ":" + std::to_string(port) + ": " + msg);
  }
  if (::listen(fd_, 64) != 0) {
    ::close(fd_);
    throw TransportError("listen: " + errno_text());
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpEndpoint> TcpListener::accept(ByteLedger* ledger, std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int ready = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (ready <= 0) throw TransportError("timed out waiting for a client connection");
  const int cfd = ::accept(fd_, nullptr, nullptr);
  if (cfd < 0) throw TransportError("accept: " + errno_text());
  return std::make_unique<TcpEndpoint>(cfd, ledger, 0, Direction::kDownlink);
}

std::unique_ptr<TcpEndpoint> tcp_connect(const std::string& host, std::uint16_t port, ByteLedger* ledger,
                                         std::uint32_t client, std::chrono::milliseconds timeout) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("socket: " + errno_text());
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      return std::make_unique<TcpEndpoint>(fd, ledger, client, Direction::kUplink);
    }
    const std::string msg = errno_text();
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError("cannot connect to " + host + ":" + std::to_string(port) + ": " + msg);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size()) {
    throw ConfigError("address '" + addr + "' is not host:port");
  }
  const std::string port = addr.substr(colon + 1);
  if (port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5 || std::stoul(port) > 65535) {
    throw ConfigError("address '" + addr + "' has an invalid port");
  }
  return {addr.substr(0, colon), static_cast<std::uint16_t>(std::stoul(port))};
}

}  // namespace mpsl::transport
