// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsl/data/partition.hpp"
#include "mpsl/data/synthetic.hpp"
#include "mpsl/protocol/config.hpp"
#include "mpsl/protocol/trainer.hpp"

namespace mpsl::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class TransportKind : std::uint8_t { kChannel, kTcp };

struct TransportSection {
  TransportKind kind = TransportKind::kChannel;
  std::string address = "127.0.0.1:0";
  bool sequential = true;
};

struct SweepSection {
  std::string axis;  // batch, blocks, depth, fusion, clients
  std::vector<nlohmann::json> values;
};

/// Everything one experiment needs. Sections: model, data, training,
/// transport, outputs, sweep (optional).
struct ExperimentConfig {
  model::ModelConfig model;
  data::SyntheticSpec data;  // geometry always follows the model
  double alpha = 0.1;
  std::size_t min_per_client = 0;  // 0: each client's share of the global batch
  protocol::Method method = protocol::Method::kMpsl;
  protocol::TrainingConfig training;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TransportSection transport;
  std::filesystem::path out_dir = "runs";
  std::optional<SweepSection> sweep;

  void validate() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& e);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Run seed s uses data seed data.seed + s, partition seed s and training
// seed s.
data::Dataset make_dataset(const ExperimentConfig& e, std::uint64_t seed);
data::Partition make_partition(const ExperimentConfig& e, const data::Dataset& d, std::uint64_t seed);
protocol::TrainingConfig training_for(const ExperimentConfig& e, std::uint64_t seed);

protocol::TrainResult run_seed(const ExperimentConfig& e, std::uint64_t seed, transport::ByteLedger* ledger = nullptr);

// Writes metrics.csv, model.ckpt, cost.csv and resolved_config.json (with
// seed and version stamp) into dir.
void write_run(const ExperimentConfig& e, std::uint64_t seed, const protocol::TrainResult& r,
               const std::filesystem::path& dir);

// Applies one sweep axis value to a copy of the config.
ExperimentConfig apply_axis(const ExperimentConfig& e, const std::string& axis, const nlohmann::json& value);

// Mean and range over seeds of the final loss and the final evaluated metric.
struct SeedSummary {
  std::string metric_name;
  double loss_mean = 0, loss_min = 0, loss_max = 0;
  double metric_mean = 0, metric_min = 0, metric_max = 0;
  bool has_metric = false;
};
SeedSummary summarize(const std::vector<protocol::TrainResult>& runs);

// Runs every seed (or only `only_seed`) and writes seed_<s>/ directories plus
// summary.csv under out.
std::vector<protocol::TrainResult> run_train(const ExperimentConfig& e, const std::filesystem::path& out,
                                             std::optional<std::uint64_t> only_seed = std::nullopt);

// Long-format rows: axis,value,seed,method,rounds,final_loss,metric_name,
// final_metric,trainable_params,up_bytes,down_bytes.
std::string sweep_csv_header();
std::string run_sweep(const ExperimentConfig& e, const std::filesystem::path& out);

// Multi-process MPSL over TCP: one serve process and num_clients join
// processes, all started from the same config and seed.
protocol::TrainResult serve(const ExperimentConfig& e, std::uint64_t seed, const std::filesystem::path& port_file);
void join(const ExperimentConfig& e, std::uint64_t seed, std::uint32_t client, const std::string& address);

}  // namespace mpsl::cli
