// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mpsl/model/model.hpp"

namespace mpsl::protocol {

using mpsl::to_string;

enum class Method : std::uint8_t { kMpsl, kFedAvg, kCentralized };
const char* to_string(Method m);
Method parse_method(const std::string& s);

struct TrainingConfig {
  std::size_t num_clients = 4;
  std::size_t rounds = 50;
  std::size_t global_batch = 32;  // split across clients, remainder to low ids
  double lr_head = 0.05;
  double lr_server = 0.05;        // body + tail
  double momentum = 0.9;
  double max_grad_norm = 0.0;  // per optimizer group; 0 disables clipping
  std::size_t local_epochs = 1;   // FedAvg
  std::uint64_t seed = 0;         // model init and batch order
  std::size_t eval_every = 1;     // 0 disables evaluation
  std::size_t eval_batch = 64;
  std::size_t recall_k = 1;
  model::ReassemblyMode eval_reassembly = model::ReassemblyMode::kFedAvg;
  std::size_t max_round_retries = 2;  // aborted rounds are retried this often
  bool record_wall_time = false;      // off keeps logs byte-reproducible

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& t);
// Unknown keys are rejected; `method` and the seed list belong to the
// experiment config and are not read here.
TrainingConfig training_config_from_json(const nlohmann::json& j, const std::string& path = "training");

// Seed of client n's batch stream.
std::uint64_t batch_seed(std::uint64_t seed, std::uint32_t client);

}  // namespace mpsl::protocol
