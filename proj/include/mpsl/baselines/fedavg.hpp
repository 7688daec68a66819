// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mpsl/protocol/trainer.hpp"

namespace mpsl::baselines {

// Element-wise sum of w_n * params_n with w_n = |D_n| / |D|. Structural
// mismatch is a contract error.
std::vector<Tensor> fedavg_aggregate(const std::vector<std::vector<NamedTensor>>& sets,
                                     const std::vector<std::size_t>& samples);

/// FedAvg over in-process channels. Each round every client pulls the
/// global trainable parameters (ModelPull, downlink), trains `local_epochs`
/// epochs from them with a fresh optimizer and pushes its parameters back
/// (ModelPush, uplink).
class FedAvg {
 public:
  FedAvg(const model::ModelConfig& c, const protocol::TrainingConfig& t, const data::Dataset& d,
         const protocol::Shards& shards, transport::ByteLedger* ledger);

  // Runs round r; returns the |D_n|-weighted mean local training loss.
  double round(std::uint32_t r);

  const model::SplitModel& global() const { return global_; }
  model::SplitModel& global() { return global_; }
  std::size_t num_clients() const { return locals_.size(); }

 private:
  model::ModelConfig config_;
  protocol::TrainingConfig train_;
  const data::Dataset* data_;
  model::SplitModel global_;
  std::vector<model::SplitModel> locals_;
  std::vector<data::BatchIterator> batches_;
  std::vector<std::size_t> sizes_;
  std::vector<transport::EndpointPair> pairs_;
};

protocol::TrainResult run_fedavg(const model::ModelConfig& c, const protocol::TrainingConfig& t,
                                 const data::Dataset& d, const protocol::Shards& shards,
                                 transport::ByteLedger* ledger = nullptr, const protocol::RunHooks& hooks = {});

}  // namespace mpsl::baselines
