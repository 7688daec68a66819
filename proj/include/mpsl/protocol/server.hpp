// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mpsl/model/forward.hpp"
#include "mpsl/model/loss.hpp"
#include "mpsl/optim.hpp"
#include "mpsl/transport/frame.hpp"

namespace mpsl::protocol {

using mpsl::to_string;

enum class Phase : std::uint8_t { kCollectingActivations, kAwaitingLosses, kBackwardDone };
const char* to_string(Phase p);

// Rebuilds Activations from decoded wire tensors; text segment lengths are
// inferred from the tensor shapes.
model::Activations activations_from_wire(const model::ModelConfig& c, std::vector<Tensor> tensors);

/// The MPSL server F_S = [W_b; W_t] and its per-round state machine.
class MpslServer {
 public:
  MpslServer(const model::ModelConfig& config, model::ServerModel server, std::vector<std::uint32_t> clients,
             double lr, double momentum, DType wire);

  void set_max_grad_norm(double n) { opt_->set_max_grad_norm(n); }

  void begin_round(std::uint32_t round);
  // Runs server_predict on a client's activations; keeps the graph.
  transport::Frame on_activations(const transport::Frame& f);
  void on_loss(const transport::Frame& f);
  // L_S, one backward, optimizer step; returns one CutGrad frame per client
  // in expected-client order.
  std::vector<transport::Frame> backward_round();
  // Drops all state of the current round (dropout policy).
  void abort_round();

  Phase phase() const { return phase_; }
  std::uint32_t round() const { return round_; }
  std::uint64_t backward_count() const { return backward_count_; }
  double last_loss() const { return last_loss_; }
  // Parameter gradients of the last backward, taken before the step.
  const std::map<std::string, std::vector<double>>& last_gradients() const { return last_grads_; }
  // Received cut-layer activations of a client in the current round.
  const model::Activations& activations(std::uint32_t client) const;
  const model::Prediction& prediction(std::uint32_t client) const;
  std::vector<std::uint32_t> missing_losses() const;

  const model::ServerModel& model() const { return server_; }
  model::ServerModel& model() { return server_; }
  const std::vector<std::uint32_t>& clients() const { return clients_; }

 private:
  struct Slot {
    model::Activations acts;
    model::Prediction pred;
    std::optional<model::ClientLoss> loss;
  };
  void require_client(std::uint32_t client) const;
  void require_round(const transport::Frame& f) const;

  model::ModelConfig config_;
  model::ServerModel server_;
  std::vector<std::uint32_t> clients_;
  std::unique_ptr<Sgd> opt_;
  DType wire_;

  std::uint32_t round_ = 0;
  bool round_open_ = false;
  Phase phase_ = Phase::kBackwardDone;
  std::map<std::uint32_t, Slot> slots_;
  std::uint64_t backward_count_ = 0;
  double last_loss_ = 0.0;
  std::map<std::string, std::vector<double>> last_grads_;
};

}  // namespace mpsl::protocol
