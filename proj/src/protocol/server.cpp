// SPDX-License-Identifier: Apache-2.0

#include "mpsl/protocol/server.hpp"

#include <algorithm>

#include "mpsl/autograd.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/ops.hpp"

namespace mpsl::protocol {

using transport::Frame;
using transport::MsgType;

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kCollectingActivations: return "collecting_activations";
    case Phase::kAwaitingLosses: return "awaiting_losses";
    case Phase::kBackwardDone: return "backward_done";
  }
  return "?";
}

model::Activations activations_from_wire(const model::ModelConfig& c, std::vector<Tensor> tensors) {
  model::Activations a;
  a.fusion = c.fusion;
  a.modalities = c.modalities;
  const bool fused = c.fusion == model::Fusion::kEarly && c.modalities.size() > 1;
  const std::size_t expected = fused ? 1 : c.modalities.size();
  if (tensors.size() != expected) {
    throw ProtocolError("expected " + std::to_string(expected) + " activation tensors, got " +
                        std::to_string(tensors.size()));
  }
  for (auto& t : tensors) {
    if (t.rank() != 3) throw ProtocolError("activation tensor must be [batch, seq, d], got " + to_string(t.shape()));
    t = t.to(c.dtype);
    t.set_requires_grad(true);
  }
  if (fused) {
    std::size_t fixed = 0;
    for (auto m : c.modalities) {
      if (m != model::Modality::kText) fixed += c.seq_len(m);
    }
    const std::size_t total = tensors[0].dim(1);
    if (total < fixed) throw ProtocolError("fused activation sequence is shorter than its fixed-length modalities");
    for (auto m : c.modalities) a.segments.push_back(m == model::Modality::kText ? total - fixed : c.seq_len(m));
  } else {
    for (const auto& t : tensors) a.segments.push_back(t.dim(1));
  }
  a.tensors = std::move(tensors);
  return a;
}

MpslServer::MpslServer(const model::ModelConfig& config, model::ServerModel server,
                       std::vector<std::uint32_t> clients, double lr, double momentum, DType wire)
    : config_(config),
      server_(std::move(server)),
      clients_(std::move(clients)),
      opt_(std::make_unique<Sgd>(model::trainable(server_.named()), lr, momentum)),
      wire_(wire) {
  if (clients_.empty()) throw ProtocolError("server needs at least one expected client");
}

void MpslServer::begin_round(std::uint32_t round) {
  if (round_open_ && phase_ != Phase::kBackwardDone) {
    throw ProtocolError("round " + std::to_string(round_) + " is still open (" + to_string(phase_) + ")");
  }
  round_ = round;
  round_open_ = true;
  phase_ = Phase::kCollectingActivations;
  slots_.clear();
}

void MpslServer::require_client(std::uint32_t client) const {
  if (std::find(clients_.begin(), clients_.end(), client) == clients_.end()) {
    throw ProtocolError("unknown client " + std::to_string(client));
  }
}

void MpslServer::require_round(const Frame& f) const {
  if (!round_open_ || f.round != round_) {
    throw ProtocolError("stale or future round " + std::to_string(f.round) + " from client " +
                        std::to_string(f.client_id) + " (server is in round " + std::to_string(round_) + ")");
  }
}

Frame MpslServer::on_activations(const Frame& f) {
  if (f.type != MsgType::kActivations) throw ProtocolError("expected an Activations frame");
  require_client(f.client_id);
  require_round(f);
  if (phase_ != Phase::kCollectingActivations || slots_.count(f.client_id)) {
    throw ProtocolError("duplicate activation upload from client " + std::to_string(f.client_id) + " in round " +
                        std::to_string(round_));
  }
  Slot slot;
  slot.acts = activations_from_wire(config_, transport::payload_tensors(f.payload));
  slot.pred = model::server_predict(config_, server_, slot.acts);
  const std::vector<Tensor> out{slot.pred.logits};
  Frame reply = transport::make_frame(MsgType::kPrediction, round_, f.client_id, transport::tensors_payload(out, wire_));
  slots_.emplace(f.client_id, std::move(slot));
  if (slots_.size() == clients_.size()) phase_ = Phase::kAwaitingLosses;
  return reply;
}

void MpslServer::on_loss(const Frame& f) {
  if (f.type != MsgType::kLoss) throw ProtocolError("expected a Loss frame");
  require_client(f.client_id);
  require_round(f);
  if (phase_ != Phase::kAwaitingLosses) {
    throw ProtocolError("loss from client " + std::to_string(f.client_id) + " arrived during " + to_string(phase_));
  }
  Slot& slot = slots_.at(f.client_id);
  if (slot.loss) throw ProtocolError("duplicate loss from client " + std::to_string(f.client_id));
  const transport::LossPayload p = transport::decode_loss(f.payload);
  const std::size_t batch = slot.acts.batch();
  if (p.count != batch) {
    throw ProtocolError("client " + std::to_string(f.client_id) + " reports |B_n|=" + std::to_string(p.count) +
                        " but uploaded " + std::to_string(batch) + " samples");
  }
  if (p.sensitivity.shape() != slot.pred.logits.shape()) {
    throw ProtocolError("loss sensitivity shape " + to_string(p.sensitivity.shape()) + " does not match prediction " +
                        to_string(slot.pred.logits.shape()));
  }
  const Tensor sens = p.sensitivity.to(config_.dtype);
  slot.loss = model::ClientLoss{ops::external_scalar(slot.pred.logits, p.loss, sens.data()), p.count};
}

std::vector<std::uint32_t> MpslServer::missing_losses() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t c : clients_) {
    auto it = slots_.find(c);
    if (it == slots_.end() || !it->second.loss) out.push_back(c);
  }
  return out;
}

std::vector<Frame> MpslServer::backward_round() {
  if (!round_open_ || phase_ == Phase::kBackwardDone) {
    throw ProtocolError("no open round awaiting its backward pass");
  }
  const auto absent = missing_losses();
  if (!absent.empty()) {
    std::string names;
    for (auto c : absent) names += (names.empty() ? "" : ", ") + std::to_string(c);
    throw BarrierError("round " + std::to_string(round_) + " barrier: no loss from client(s) " + names, absent);
  }
  std::vector<model::ClientLoss> losses;
  for (std::uint32_t c : clients_) losses.push_back(*slots_.at(c).loss);
  const Tensor total = model::aggregate_losses(losses);
  backward(total);
  ++backward_count_;
  last_loss_ = total.item();
  last_grads_.clear();
  for (const auto& [name, t] : server_.named()) {
    if (t.has_grad()) last_grads_[name] = std::vector<double>(t.grad().begin(), t.grad().end());
  }
  opt_->step();

  std::vector<Frame> out;
  for (std::uint32_t c : clients_) {
    const Slot& slot = slots_.at(c);
    std::vector<Tensor> grads;
    for (const auto& a : slot.acts.tensors) {
      std::vector<double> g = a.has_grad() ? std::vector<double>(a.grad().begin(), a.grad().end())
                                           : std::vector<double>(a.numel(), 0.0);
      grads.push_back(Tensor::from_data(a.shape(), std::move(g), a.dtype()));
    }
    out.push_back(transport::make_frame(MsgType::kCutGrad, round_, c, transport::tensors_payload(grads, wire_)));
  }
  phase_ = Phase::kBackwardDone;
  return out;
}

void MpslServer::abort_round() {
  slots_.clear();
  phase_ = Phase::kBackwardDone;
  for (const auto& [name, t] : server_.named()) Tensor(t).clear_grad();
}

const model::Activations& MpslServer::activations(std::uint32_t client) const { return slots_.at(client).acts; }
const model::Prediction& MpslServer::prediction(std::uint32_t client) const { return slots_.at(client).pred; }

}  // namespace mpsl::protocol
