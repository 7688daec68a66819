// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "mpsl/data/partition.hpp"
#include "mpsl/model/forward.hpp"
#include "mpsl/optim.hpp"
#include "mpsl/transport/frame.hpp"

namespace mpsl::protocol {

using mpsl::to_string;

/// One MPSL client: owns its head F_Cn, its shard of the data and the labels
/// of the pending batch. Labels are only ever read by the local loss.
class MpslClient {
 public:
  MpslClient(std::uint32_t id, const model::ModelConfig& config, model::ClientHead head,
             const std::vector<model::Sample>& pool, std::vector<std::size_t> shard, std::size_t batch,
             std::uint64_t batch_seed, double lr, double momentum, DType wire);

  void set_max_grad_norm(double n) { opt_->set_max_grad_norm(n); }

  std::uint32_t id() const { return id_; }
  transport::Frame register_frame() const;

  // Samples B_n, runs the tokenizers and returns the Activations frame.
  transport::Frame upload_activations(std::uint32_t round);
  // Evaluates L_Cn on the prediction and returns the Loss frame.
  transport::Frame on_prediction(const transport::Frame& prediction);
  // Backpropagates the cut-layer gradient through the head and steps.
  void on_cut_grad(const transport::Frame& grad);
  // Round aborted by the server: the next upload replays the same batch.
  void on_abort();

  const model::ClientHead& head() const { return head_; }
  model::ClientHead& head() { return head_; }
  std::size_t num_samples() const { return shard_size_; }
  std::size_t batch_size() const { return batch_.batch_size(); }
  const std::vector<std::size_t>& last_batch() const { return pending_indices_; }
  double last_loss() const { return last_loss_; }
  DType wire() const { return wire_; }

 private:
  std::uint32_t id_;
  model::ModelConfig config_;
  model::ClientHead head_;
  const std::vector<model::Sample>* pool_;
  std::size_t shard_size_;
  data::BatchIterator batch_;
  std::unique_ptr<Sgd> opt_;
  DType wire_;

  std::uint32_t round_ = 0;
  std::vector<std::size_t> pending_indices_;
  std::vector<std::size_t> pending_labels_;
  std::optional<model::Activations> pending_;
  bool awaiting_grad_ = false;
  bool replay_ = false;
  double last_loss_ = 0.0;
};

}  // namespace mpsl::protocol
