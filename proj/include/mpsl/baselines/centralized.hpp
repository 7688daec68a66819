// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>

#include "mpsl/optim.hpp"
#include "mpsl/protocol/trainer.hpp"

namespace mpsl::baselines {

/// Monolithic training of [W_h; W_b; W_t] with separate learning rates for
/// the head and for body + tail.
class CentralizedTrainer {
 public:
  CentralizedTrainer(model::SplitModel m, double lr_head, double lr_server, double momentum);

  // Clips head and server gradients separately, as in split training.
  void set_max_grad_norm(double n) {
    head_opt_->set_max_grad_norm(n);
    server_opt_->set_max_grad_norm(n);
  }

  // One step on the mean loss over the batch; returns that loss.
  double step(const std::vector<const model::Sample*>& batch);
  double step(const std::vector<model::Sample>& pool, std::span<const std::size_t> indices);

  const model::SplitModel& model() const { return model_; }
  model::SplitModel& model() { return model_; }

 private:
  model::SplitModel model_;
  std::unique_ptr<Sgd> head_opt_;
  std::unique_ptr<Sgd> server_opt_;
};

// Batch loss of a whole model (mean cross-entropy, or symmetric contrastive
// loss over the batch similarity matrix).
Tensor batch_loss(const model::SplitModel& m, const model::InputBatch& batch, std::span<const std::size_t> labels);

// One step per round over all training data, batch order from client 0's
// stream so that a one-client MPSL run sees the same batches.
protocol::TrainResult run_centralized(const model::ModelConfig& c, const protocol::TrainingConfig& t,
                                      const data::Dataset& d, const protocol::RunHooks& hooks = {});

}  // namespace mpsl::baselines
