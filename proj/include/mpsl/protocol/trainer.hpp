// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mpsl/analysis/metrics.hpp"
#include "mpsl/data/partition.hpp"
#include "mpsl/data/synthetic.hpp"
#include "mpsl/protocol/client.hpp"
#include "mpsl/protocol/config.hpp"
#include "mpsl/protocol/server.hpp"
#include "mpsl/transport/endpoint.hpp"

namespace mpsl::protocol {

using Shards = std::vector<std::vector<std::size_t>>;

// Per-client train indices of a partition.
Shards shards_of(const data::Partition& p);
// Labels the partitioner should see. Retrieval pairs are all one class, so
// the Dirichlet draw only shapes client sizes.
std::vector<std::size_t> partition_labels(const data::Dataset& d);

struct RoundAbort {
  std::uint32_t round;
  std::size_t attempt;
  std::vector<std::uint32_t> absentees;
};

struct TrainResult {
  model::SplitModel model;               // evaluation model after the last round
  std::vector<model::ClientHead> heads;  // MPSL only, in client order
  analysis::MetricLog log;
  std::uint64_t server_backwards = 0;
  std::vector<RoundAbort> aborts;
};

struct RunHooks {
  // Sequential mode: withhold client n's loss in (round, attempt).
  std::function<bool(std::uint32_t round, std::uint32_t client, std::size_t attempt)> drop_loss;
  std::function<void(const analysis::MetricRecord&)> on_round;
};

enum class RunMode : std::uint8_t { kSequential, kThreaded };

// One connection per client, seen from both ends.
struct Link {
  transport::Endpoint* client;
  transport::Endpoint* server;
};

// Evaluation schedule shared by all trainers.
bool eval_due(const TrainingConfig& t, std::uint32_t round);
void fill_metric(analysis::MetricRecord& r, const model::SplitModel& m, const data::Dataset& d,
                 const TrainingConfig& t);
std::uint64_t round_bytes(const transport::ByteLedger& ledger, transport::Direction dir, std::uint32_t round);

// Builds clients with identical initial heads and a server from init_model(c, t.seed).
std::vector<MpslClient> make_clients(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                                     const Shards& shards, const model::SplitModel& init);

// Fixed-order, single-threaded MPSL run over the given links (one per
// client, in client order). Deterministic for a fixed seed.
TrainResult run_mpsl_sequential(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                                const Shards& shards, const std::vector<Link>& links,
                                const transport::ByteLedger& ledger, const RunHooks& hooks = {});

// In-process MPSL run over channel transports. A null ledger is replaced by
// a private one.
TrainResult run_mpsl(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                     const Shards& shards, transport::ByteLedger* ledger = nullptr, const RunHooks& hooks = {},
                     RunMode mode = RunMode::kSequential);

// Blocking client side of a concurrent run: registers, serves `rounds`
// rounds, then pushes its head for final evaluation (tagged round+1).
void client_loop(MpslClient& client, transport::Endpoint& ep, std::size_t rounds);

// Blocking server side of a concurrent run. Endpoints may be in any order;
// their Register frames identify the clients. Losses are logged per round,
// the metric once, after the final head collection.
TrainResult server_loop(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                        std::vector<transport::Endpoint*> endpoints, const transport::ByteLedger& ledger,
                        const RunHooks& hooks = {});

}  // namespace mpsl::protocol
