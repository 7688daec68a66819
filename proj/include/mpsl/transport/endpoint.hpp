// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "mpsl/transport/frame.hpp"
#include "mpsl/transport/ledger.hpp"

namespace mpsl::transport {

/// Ordered, reliable, frame-delimited duplex link. Every sent frame is
/// charged to the ledger (if any) under this endpoint's client id and send
/// direction.
class Endpoint {
 public:
  Endpoint(ByteLedger* ledger, std::uint32_t client, Direction send_dir)
      : ledger_(ledger), client_(client), send_dir_(send_dir) {}
  virtual ~Endpoint() = default;
  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  void send(const Frame& f);
  Frame recv();
  // recv() that also rejects Abort frames and unexpected types.
  Frame expect(MsgType type);
  virtual void close() = 0;

  std::uint32_t client() const { return client_; }
  void set_client(std::uint32_t c) { client_ = c; }
  // Also charge received frames (in the peer's direction). For processes
  // that only hold one side of each link.
  void set_record_receives(bool on) { record_receives_ = on; }

 protected:
  virtual void send_bytes(std::vector<std::uint8_t> bytes) = 0;
  virtual Frame recv_frame() = 0;

 private:
  ByteLedger* ledger_;
  std::uint32_t client_;
  Direction send_dir_;
  bool record_receives_ = false;
};

namespace detail {
struct Queue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> items;
  bool closed = false;
};
}  // namespace detail

// In-process endpoint over a pair of byte queues.
class ChannelEndpoint : public Endpoint {
 public:
  ChannelEndpoint(ByteLedger* ledger, std::uint32_t client, Direction send_dir,
                  std::shared_ptr<detail::Queue> in, std::shared_ptr<detail::Queue> out,
                  std::chrono::milliseconds timeout);
  ~ChannelEndpoint() override;
  void close() override;

 protected:
  void send_bytes(std::vector<std::uint8_t> bytes) override;
  Frame recv_frame() override;

 private:
  std::shared_ptr<detail::Queue> in_, out_;
  std::chrono::milliseconds timeout_;
};

struct EndpointPair {
  std::unique_ptr<Endpoint> client;
  std::unique_ptr<Endpoint> server;
};

// Client side sends uplink, server side sends downlink.
EndpointPair channel_pair(ByteLedger* ledger, std::uint32_t client,
                          std::chrono::milliseconds timeout = std::chrono::seconds(60));

class TcpEndpoint : public Endpoint {
 public:
  TcpEndpoint(int fd, ByteLedger* ledger, std::uint32_t client, Direction send_dir);
  ~TcpEndpoint() override;
  void close() override;

 protected:
  void send_bytes(std::vector<std::uint8_t> bytes) override;
  Frame recv_frame() override;

 private:
  void read_exact(std::uint8_t* dst, std::size_t n, std::size_t offset);
  int fd_;
};

class TcpListener {
 public:
  // Port 0 picks a free port.
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  // Server-side endpoint; its client id is unknown until the peer registers.
  std::unique_ptr<TcpEndpoint> accept(ByteLedger* ledger, std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<TcpEndpoint> tcp_connect(const std::string& host, std::uint16_t port, ByteLedger* ledger,
                                         std::uint32_t client,
                                         std::chrono::milliseconds timeout = std::chrono::seconds(10));

// "host:port" -> (host, port); ConfigError when malformed.
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);

}  // namespace mpsl::transport
