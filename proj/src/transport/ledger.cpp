// SPDX-License-Identifier: Apache-2.0

#include "mpsl/transport/ledger.hpp"

#include <set>

#include "mpsl/errors.hpp"

namespace mpsl::transport {

const char* to_string(Direction d) { return d == Direction::kUplink ? "up" : "down"; }

void ByteLedger::record(std::uint32_t client, Direction dir, const Frame& f, std::span<const std::uint8_t> encoded) {
  std::lock_guard lock(mu_);
  const std::uint64_t n = encoded.size();
  clients_[client] = true;
  by_type_[f.type] += n;
  if (f.type == MsgType::kRegister) {
    setup_ += n;
  } else {
    by_round_[{client, dir, f.round}] += n;
  }
  if (keep_frames_) log_.push_back({client, dir, {encoded.begin(), encoded.end()}});
}

std::uint64_t ByteLedger::total() const {
  std::lock_guard lock(mu_);
  std::uint64_t t = setup_;
  for (const auto& [k, v] : by_round_) t += v;
  return t;
}

std::uint64_t ByteLedger::setup_bytes() const {
  std::lock_guard lock(mu_);
  return setup_;
}

std::uint64_t ByteLedger::round_bytes(std::uint32_t client, Direction dir, std::uint32_t round) const {
  std::lock_guard lock(mu_);
  auto it = by_round_.find({client, dir, round});
  return it == by_round_.end() ? 0 : it->second;
}

std::uint64_t ByteLedger::client_bytes(std::uint32_t client, Direction dir) const {
  std::lock_guard lock(mu_);
  std::uint64_t t = 0;
  for (const auto& [k, v] : by_round_) {
    if (std::get<0>(k) == client && std::get<1>(k) == dir) t += v;
  }
  return t;
}

std::uint64_t ByteLedger::type_bytes(MsgType t) const {
  std::lock_guard lock(mu_);
  auto it = by_type_.find(t);
  return it == by_type_.end() ? 0 : it->second;
}

std::vector<std::uint32_t> ByteLedger::clients() const {
  std::lock_guard lock(mu_);
  std::vector<std::uint32_t> out;
  for (const auto& [c, _] : clients_) out.push_back(c);
  return out;
}

std::vector<std::uint32_t> ByteLedger::rounds() const {
  std::lock_guard lock(mu_);
  std::set<std::uint32_t> s;
  for (const auto& [k, v] : by_round_) s.insert(std::get<2>(k));
  return {s.begin(), s.end()};
}

std::vector<LoggedFrame> ByteLedger::frames() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<LoggedFrame> ByteLedger::frames(std::uint32_t client, Direction dir) const {
  std::lock_guard lock(mu_);
  std::vector<LoggedFrame> out;
  for (const auto& f : log_) {
    if (f.client == client && f.direction == dir) out.push_back(f);
  }
  return out;
}

LedgerReport ledger_report(const ByteLedger& ledger, double rounds_per_epoch) {
  const auto rounds = ledger.rounds();
  if (rounds.empty()) throw MetricError("ledger has no completed rounds");
  const auto clients = ledger.clients();
  LedgerReport r;
  const double scale = rounds_per_epoch / static_cast<double>(rounds.size()) / 1e6 / static_cast<double>(clients.size());
  for (std::uint32_t c : clients) {
    r.up_mb += static_cast<double>(ledger.client_bytes(c, Direction::kUplink)) * scale;
    r.down_mb += static_cast<double>(ledger.client_bytes(c, Direction::kDownlink)) * scale;
  }
  return r;
}

}  // namespace mpsl::transport
