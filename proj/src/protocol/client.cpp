// SPDX-License-Identifier: Apache-2.0

#include "mpsl/protocol/client.hpp"

#include "mpsl/autograd.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/loss.hpp"

namespace mpsl::protocol {

using transport::Frame;
using transport::MsgType;

MpslClient::MpslClient(std::uint32_t id, const model::ModelConfig& config, model::ClientHead head,
                       const std::vector<model::Sample>& pool, std::vector<std::size_t> shard, std::size_t batch,
                       std::uint64_t seed, double lr, double momentum, DType wire)
    : id_(id),
      config_(config),
      head_(std::move(head)),
      pool_(&pool),
      shard_size_(shard.size()),
      batch_(shard.empty() ? throw DataError("client " + std::to_string(id) + " has an empty local dataset")
                           : std::move(shard),
             batch, seed, id),
      opt_(std::make_unique<Sgd>(model::trainable(head_.named()), lr, momentum)),
      wire_(wire) {}

Frame MpslClient::register_frame() const { return transport::make_frame(MsgType::kRegister, 0, id_, {}); }

Frame MpslClient::upload_activations(std::uint32_t round) {
  if (awaiting_grad_) throw ProtocolError("client " + std::to_string(id_) + " still waits for its cut gradient");
  round_ = round;
  if (!replay_) pending_indices_ = batch_.next();
  replay_ = false;
  std::vector<const model::Sample*> samples;
  pending_labels_.clear();
  for (std::size_t i : pending_indices_) {
    samples.push_back(&(*pool_)[i]);
    pending_labels_.push_back((*pool_)[i].label);
  }
  pending_ = model::client_forward(config_, head_, model::make_batch(config_, samples));
  awaiting_grad_ = true;
  return transport::make_frame(MsgType::kActivations, round, id_, transport::tensors_payload(pending_->tensors, wire_));
}

Frame MpslClient::on_prediction(const Frame& prediction) {
  if (!pending_ || prediction.round != round_ || prediction.client_id != id_) {
    throw ProtocolError("client " + std::to_string(id_) + ": unexpected prediction for round " +
                        std::to_string(prediction.round));
  }
  const auto tensors = transport::payload_tensors(prediction.payload);
  if (tensors.size() != 1 || tensors[0].rank() != 2 || tensors[0].dim(0) != pending_labels_.size()) {
    throw ProtocolError("client " + std::to_string(id_) + ": prediction does not match the pending batch of " +
                        std::to_string(pending_labels_.size()));
  }
  const Tensor logits = tensors[0].to(config_.dtype);
  const model::LossEval ev = model::evaluate_loss(config_.task, logits, pending_labels_);
  last_loss_ = ev.value;
  transport::LossPayload p;
  p.loss = static_cast<float>(ev.value);
  p.count = static_cast<std::uint32_t>(pending_labels_.size());
  p.sensitivity = Tensor::from_data(logits.shape(), ev.sensitivity, config_.dtype);
  return transport::make_frame(MsgType::kLoss, round_, id_, transport::encode_loss(p, wire_));
}

void MpslClient::on_cut_grad(const Frame& grad) {
  if (!pending_ || !awaiting_grad_ || grad.round != round_) {
    throw ProtocolError("client " + std::to_string(id_) + ": unexpected cut gradient for round " +
                        std::to_string(grad.round));
  }
  const auto grads = transport::payload_tensors(grad.payload);
  if (grads.size() != pending_->tensors.size()) {
    throw ProtocolError("client " + std::to_string(id_) + ": got " + std::to_string(grads.size()) +
                        " cut gradients for " + std::to_string(pending_->tensors.size()) + " activation tensors");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != pending_->tensors[i].shape()) {
      throw ProtocolError("client " + std::to_string(id_) + ": cut gradient " + std::to_string(i) + " has shape " +
                          to_string(grads[i].shape()) + ", activations are " +
                          to_string(pending_->tensors[i].shape()));
    }
  }
  for (std::size_t i = 0; i < grads.size(); ++i) backward(pending_->tensors[i], grads[i].data());
  opt_->step();
  pending_.reset();
  awaiting_grad_ = false;
}

void MpslClient::on_abort() {
  if (!pending_) return;
  pending_.reset();
  awaiting_grad_ = false;
  replay_ = true;
}

}  // namespace mpsl::protocol
