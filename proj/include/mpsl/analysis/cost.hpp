// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpsl/model/config.hpp"

namespace mpsl::analysis {

enum class CostMethod : std::uint8_t { kMpsl, kFedAvg, kFedClip, kCentralized };
const char* to_string(CostMethod m);
CostMethod parse_cost_method(const std::string& s);

enum class CostRole : std::uint8_t { kClient, kServer };

// FLOP convention: one multiply-accumulate is 2 FLOPs, backward is twice the
// forward of every segment on the gradient path (from the first trainable
// segment to the loss). Norms, softmax and activations are not counted.
double tokenizer_flops(const model::ModelConfig& c);
double block_flops(const model::ModelConfig& c, std::size_t seq);
double encoder_flops(const model::ModelConfig& c);  // all blocks, forward, per input
double tail_flops(const model::ModelConfig& c);
// Forward + backward FLOPs per input for one side of the method.
// `freeze_tokenizers` marks the head as frozen as well.
double flops_model(const model::ModelConfig& c, CostRole role, CostMethod method, bool freeze_tokenizers = false);

// FedCLIP-style adapter trained on a frozen backbone: two proj x proj
// linear layers on the image embedding.
std::size_t adapter_params(const model::ModelConfig& c);
// Trainable parameters held by one client.
std::size_t client_params(const model::ModelConfig& c, CostMethod method);

struct CommSetting {
  std::size_t batch_per_client = 4;     // |B_n|
  std::size_t samples_per_client = 128;  // |D_n|
  std::size_t local_epochs = 1;          // FedAvg E
};

struct RoundBytes {
  std::uint64_t up = 0;
  std::uint64_t down = 0;
};

// Exact bytes one client sends and receives in one training round, using the
// frame format and the model dtype on the wire.
RoundBytes round_bytes(const model::ModelConfig& c, CostMethod method, std::size_t batch_per_client);
// Training rounds per local epoch: |D_n| / |B_n| for MPSL (short batch
// dropped), 1 / E for FedAvg and FedCLIP.
double rounds_per_epoch(CostMethod method, const CommSetting& s);

struct CommCost {
  RoundBytes per_round;
  double up_mb_per_epoch = 0.0;  // 1 MB = 1e6 bytes
  double down_mb_per_epoch = 0.0;
  double total_mb() const { return up_mb_per_epoch + down_mb_per_epoch; }
};
CommCost comm_model(const model::ModelConfig& c, CostMethod method, const CommSetting& s = {});

struct CostReport {
  CostMethod method;
  std::string preset;
  std::size_t client_params = 0;
  double client_gflops = 0.0;
  double server_gflops = 0.0;
  double up_mb_per_epoch = 0.0;
  double down_mb_per_epoch = 0.0;
};

CostReport cost_report(const model::ModelConfig& c, const std::string& preset, CostMethod method,
                       const CommSetting& s = {});
// Columns: method, preset, client_params, client_gflops, server_gflops,
// up_mb_per_epoch, down_mb_per_epoch.
std::string cost_csv(const std::vector<CostReport>& rows);
void write_cost_csv(const std::vector<CostReport>& rows, const std::filesystem::path& path);

// Unweighted mean of report rows (the "Avg." columns over task mixes).
CostReport average(const std::vector<CostReport>& rows);

}  // namespace mpsl::analysis
