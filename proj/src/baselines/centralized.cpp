// SPDX-License-Identifier: Apache-2.0

#include "mpsl/baselines/centralized.hpp"

#include <chrono>
#include <numeric>

#include "mpsl/autograd.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/loss.hpp"

namespace mpsl::baselines {

CentralizedTrainer::CentralizedTrainer(model::SplitModel m, double lr_head, double lr_server, double momentum)
    : model_(std::move(m)),
      head_opt_(std::make_unique<Sgd>(model::trainable(model_.head.named()), lr_head, momentum)),
      server_opt_(std::make_unique<Sgd>(model::trainable(model_.server.named()), lr_server, momentum)) {}

Tensor batch_loss(const model::SplitModel& m, const model::InputBatch& batch, std::span<const std::size_t> labels) {
  const model::Prediction p = model::predict(m, batch);
  if (m.config.task == model::Task::kRetrieval) return model::symmetric_cross_entropy(p.logits);
  return model::cross_entropy(p.logits, labels);
}

double CentralizedTrainer::step(const std::vector<const model::Sample*>& batch) {
  if (batch.empty()) throw DataError("centralized step on an empty batch");
  const auto labels = model::labels_of(batch);
  const Tensor loss = batch_loss(model_, model::make_batch(model_.config, batch), labels);
  backward(loss);
  head_opt_->step();
  server_opt_->step();
  return loss.item();
}

double CentralizedTrainer::step(const std::vector<model::Sample>& pool, std::span<const std::size_t> indices) {
  std::vector<const model::Sample*> batch;
  for (std::size_t i : indices) batch.push_back(&pool.at(i));
  return step(batch);
}

protocol::TrainResult run_centralized(const model::ModelConfig& c, const protocol::TrainingConfig& t,
                                      const data::Dataset& d, const protocol::RunHooks& hooks) {
  t.validate();
  CentralizedTrainer trainer(model::init_model(c, t.seed), t.lr_head, t.lr_server, t.momentum);
  trainer.set_max_grad_norm(t.max_grad_norm);
  std::vector<std::size_t> all(d.train.size());
  std::iota(all.begin(), all.end(), 0);
  data::BatchIterator batches(all, t.global_batch, protocol::batch_seed(t.seed, 0), 0);

  protocol::TrainResult res;
  for (std::uint32_t r = 1; r <= t.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    analysis::MetricRecord rec;
    rec.round = r;
    rec.method = protocol::to_string(protocol::Method::kCentralized);
    rec.loss = trainer.step(d.train, batches.next());
    if (protocol::eval_due(t, r)) protocol::fill_metric(rec, trainer.model(), d, t);
    if (t.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (hooks.on_round) hooks.on_round(rec);
    res.log.append(std::move(rec));
  }
  res.model = trainer.model().clone();
  return res;
}

}  // namespace mpsl::baselines
