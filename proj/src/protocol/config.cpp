// SPDX-License-Identifier: Apache-2.0

#include "mpsl/protocol/config.hpp"

#include "mpsl/errors.hpp"
#include "mpsl/json_fields.hpp"

namespace mpsl::protocol {

const char* to_string(Method m) {
  switch (m) {
    case Method::kMpsl: return "mpsl";
    case Method::kFedAvg: return "fedavg";
    case Method::kCentralized: return "centralized";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "mpsl") return Method::kMpsl;
  if (s == "fedavg") return Method::kFedAvg;
  if (s == "centralized") return Method::kCentralized;
  throw ConfigError("unknown method '" + s + "' (expected one of: mpsl, fedavg, centralized)");
}

void TrainingConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("training config: " + msg);
  };
  require(num_clients >= 1, "num_clients must be >= 1");
  require(global_batch >= num_clients, "global_batch must give every client at least one sample");
  require(lr_head >= 0.0 && lr_server >= 0.0, "learning rates must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(max_grad_norm >= 0.0, "max_grad_norm must be non-negative");
  require(local_epochs >= 1, "local_epochs must be >= 1");
  require(eval_batch >= 1, "eval_batch must be >= 1");
  require(recall_k >= 1, "recall_k must be >= 1");
}

nlohmann::json to_json(const TrainingConfig& t) {
  return {{"num_clients", t.num_clients},
          {"rounds", t.rounds},
          {"global_batch", t.global_batch},
          {"lr_head", t.lr_head},
          {"lr_server", t.lr_server},
          {"momentum", t.momentum},
          {"max_grad_norm", t.max_grad_norm},
          {"local_epochs", t.local_epochs},
          {"seed", t.seed},
          {"eval_every", t.eval_every},
          {"eval_batch", t.eval_batch},
          {"recall_k", t.recall_k},
          {"eval_reassembly", t.eval_reassembly == model::ReassemblyMode::kFedAvg ? "fedavg" : "per_client"},
          {"max_round_retries", t.max_round_retries},
          {"record_wall_time", t.record_wall_time}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path,
               {"num_clients", "rounds", "global_batch", "lr_head", "lr_server", "momentum", "max_grad_norm", "local_epochs", "seed",
                "eval_every", "eval_batch", "recall_k", "eval_reassembly", "max_round_retries", "record_wall_time"});
  TrainingConfig t;
  f.size("num_clients", t.num_clients);
  f.size("rounds", t.rounds);
  f.size("global_batch", t.global_batch);
  f.real("lr_head", t.lr_head);
  f.real("lr_server", t.lr_server);
  f.real("momentum", t.momentum);
  f.real("max_grad_norm", t.max_grad_norm);
  f.size("local_epochs", t.local_epochs);
  f.u64("seed", t.seed);
  f.size("eval_every", t.eval_every);
  f.size("eval_batch", t.eval_batch);
  f.size("recall_k", t.recall_k);
  f.parsed("eval_reassembly", t.eval_reassembly, [](const std::string& s) {
    if (s == "fedavg") return model::ReassemblyMode::kFedAvg;
    if (s == "per_client") return model::ReassemblyMode::kPerClient;
    throw ConfigError("unknown reassembly '" + s + "' (expected one of: fedavg, per_client)");
  });
  f.size("max_round_retries", t.max_round_retries);
  f.boolean("record_wall_time", t.record_wall_time);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return t;
}

std::uint64_t batch_seed(std::uint64_t seed, std::uint32_t client) {
  // splitmix64 of (seed, client)
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + client + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace mpsl::protocol
