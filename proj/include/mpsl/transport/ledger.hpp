// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "mpsl/transport/frame.hpp"

namespace mpsl::transport {

enum class Direction : std::uint8_t { kUplink, kDownlink };
const char* to_string(Direction d);

struct LoggedFrame {
  std::uint32_t client;
  Direction direction;
  std::vector<std::uint8_t> bytes;
};

/// Exact byte counters keyed by (client, direction, round). Register frames
/// are connection setup and land in a separate bucket, so per-round figures
/// cover training traffic only.
class ByteLedger {
 public:
  explicit ByteLedger(bool keep_frames = false) : keep_frames_(keep_frames) {}

  void record(std::uint32_t client, Direction dir, const Frame& f, std::span<const std::uint8_t> encoded);

  std::uint64_t total() const;
  std::uint64_t setup_bytes() const;
  std::uint64_t round_bytes(std::uint32_t client, Direction dir, std::uint32_t round) const;
  std::uint64_t client_bytes(std::uint32_t client, Direction dir) const;
  std::uint64_t type_bytes(MsgType t) const;
  std::vector<std::uint32_t> clients() const;
  std::vector<std::uint32_t> rounds() const;
  std::vector<LoggedFrame> frames() const;
  std::vector<LoggedFrame> frames(std::uint32_t client, Direction dir) const;

 private:
  mutable std::mutex mu_;
  bool keep_frames_;
  std::map<std::tuple<std::uint32_t, Direction, std::uint32_t>, std::uint64_t> by_round_;
  std::map<MsgType, std::uint64_t> by_type_;
  std::map<std::uint32_t, bool> clients_;
  std::uint64_t setup_ = 0;
  std::vector<LoggedFrame> log_;
};

struct LedgerReport {
  double up_mb = 0.0;  // per client per epoch, 1 MB = 1e6 bytes
  double down_mb = 0.0;
  double total_mb() const { return up_mb + down_mb; }
};

// Mean over clients of bytes per round, times rounds_per_epoch.
LedgerReport ledger_report(const ByteLedger& ledger, double rounds_per_epoch);

}  // namespace mpsl::transport
