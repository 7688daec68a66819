// SPDX-License-Identifier: Apache-2.0

#include "mpsl/baselines/fedavg.hpp"

#include <chrono>

#include "mpsl/baselines/centralized.hpp"
#include "mpsl/errors.hpp"

namespace mpsl::baselines {

using transport::MsgType;

std::vector<Tensor> fedavg_aggregate(const std::vector<std::vector<NamedTensor>>& sets,
                                     const std::vector<std::size_t>& samples) {
  if (sets.size() != samples.size()) throw ContractError("fedavg: one sample count per client is required");
  double total = 0.0;
  for (auto s : samples) total += static_cast<double>(s);
  if (!(total > 0.0)) throw ContractError("fedavg: clients hold no samples");
  std::vector<double> w;
  for (auto s : samples) w.push_back(static_cast<double>(s) / total);
  return model::weighted_average(sets, w);
}

namespace {

std::vector<Tensor> values(const std::vector<NamedTensor>& params) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params) out.push_back(p);
  return out;
}

void load(const std::vector<NamedTensor>& dst, const std::vector<Tensor>& src, DType dtype) {
  if (src.size() != dst.size()) throw ContractError("fedavg: parameter count mismatch");
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (src[i].shape() != dst[i].second.shape()) {
      throw ContractError("fedavg: shape mismatch at '" + dst[i].first + "'");
    }
    named.emplace_back(dst[i].first, src[i].to(dtype));
  }
  model::copy_values(named, dst);
}

}  // namespace

FedAvg::FedAvg(const model::ModelConfig& c, const protocol::TrainingConfig& t, const data::Dataset& d,
               const protocol::Shards& shards, transport::ByteLedger* ledger)
    : config_(c), train_(t), data_(&d), global_(model::init_model(c, t.seed)) {
  t.validate();
  if (shards.size() != t.num_clients) {
    throw ConfigError("partition has " + std::to_string(shards.size()) + " clients, training expects " +
                      std::to_string(t.num_clients));
  }
  const auto alloc = data::allocate_batch(t.global_batch, t.num_clients);
  for (std::uint32_t n = 0; n < shards.size(); ++n) {
    if (shards[n].empty()) throw DataError("client " + std::to_string(n) + " has an empty local dataset");
    locals_.push_back(global_.clone());
    batches_.emplace_back(shards[n], alloc[n], protocol::batch_seed(t.seed, n), n);
    sizes_.push_back(shards[n].size());
    pairs_.push_back(transport::channel_pair(ledger, n));
  }
}

double FedAvg::round(std::uint32_t r) {
  const auto global_params = model::trainable(global_.named());
  std::vector<std::vector<NamedTensor>> pushed;
  std::vector<std::size_t> counts;
  double loss = 0.0;
  double total = 0.0;
  for (std::uint32_t n = 0; n < locals_.size(); ++n) {
    auto& link = pairs_[n];
    link.server->send(transport::make_frame(MsgType::kModelPull, r, n,
                                            transport::tensors_payload(values(global_params), config_.dtype)));
    const auto pulled = transport::payload_tensors(link.client->expect(MsgType::kModelPull).payload);
    load(model::trainable(locals_[n].named()), pulled, config_.dtype);

    CentralizedTrainer trainer(std::move(locals_[n]), train_.lr_head, train_.lr_server, train_.momentum);
    trainer.set_max_grad_norm(train_.max_grad_norm);
    const std::size_t steps = train_.local_epochs * batches_[n].batches_per_epoch();
    double local = 0.0;
    for (std::size_t s = 0; s < steps; ++s) local += trainer.step(data_->train, batches_[n].next());
    locals_[n] = std::move(trainer.model());
    loss += static_cast<double>(sizes_[n]) * local / static_cast<double>(steps);
    total += static_cast<double>(sizes_[n]);

    transport::ModelPushPayload push;
    push.samples = static_cast<std::uint32_t>(sizes_[n]);
    push.params = values(model::trainable(locals_[n].named()));
    link.client->send(transport::make_frame(MsgType::kModelPush, r, n,
                                            transport::encode_model_push(push, config_.dtype)));
    auto got = transport::decode_model_push(link.server->expect(MsgType::kModelPush).payload);
    std::vector<NamedTensor> set;
    if (got.params.size() != global_params.size()) {
      throw ContractError("fedavg: client " + std::to_string(n) + " pushed " + std::to_string(got.params.size()) +
                          " tensors, expected " + std::to_string(global_params.size()));
    }
    for (std::size_t i = 0; i < got.params.size(); ++i) set.emplace_back(global_params[i].first, got.params[i]);
    pushed.push_back(std::move(set));
    counts.push_back(got.samples);
  }
  load(global_params, fedavg_aggregate(pushed, counts), config_.dtype);
  return loss / total;
}

protocol::TrainResult run_fedavg(const model::ModelConfig& c, const protocol::TrainingConfig& t,
                                 const data::Dataset& d, const protocol::Shards& shards,
                                 transport::ByteLedger* ledger, const protocol::RunHooks& hooks) {
  transport::ByteLedger own;
  if (!ledger) ledger = &own;
  FedAvg fed(c, t, d, shards, ledger);
  protocol::TrainResult res;
  for (std::uint32_t r = 1; r <= t.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    analysis::MetricRecord rec;
    rec.round = r;
    rec.method = protocol::to_string(protocol::Method::kFedAvg);
    rec.loss = fed.round(r);
    if (protocol::eval_due(t, r)) protocol::fill_metric(rec, fed.global(), d, t);
    rec.up_bytes = protocol::round_bytes(*ledger, transport::Direction::kUplink, r);
    rec.down_bytes = protocol::round_bytes(*ledger, transport::Direction::kDownlink, r);
    if (t.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (hooks.on_round) hooks.on_round(rec);
    res.log.append(std::move(rec));
  }
  res.model = fed.global().clone();
  return res;
}

}  // namespace mpsl::baselines
