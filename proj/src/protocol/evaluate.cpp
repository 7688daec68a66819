// SPDX-License-Identifier: Apache-2.0

#include "mpsl/protocol/evaluate.hpp"

#include <algorithm>

#include "mpsl/analysis/metrics.hpp"
#include "mpsl/autograd.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/loss.hpp"
#include "mpsl/ops.hpp"

namespace mpsl::protocol {

namespace {

template <typename Fn>
void for_chunks(const std::vector<model::Sample>& samples, std::size_t batch, Fn&& fn) {
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<const model::Sample*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&samples[i]);
    fn(ptrs);
  }
}

}  // namespace

std::vector<Tensor> embed(const model::SplitModel& m, const std::vector<model::Sample>& samples, std::size_t batch) {
  if (m.config.task != model::Task::kRetrieval) throw ContractError("embeddings are defined for retrieval models");
  if (samples.empty()) throw MetricError("cannot embed an empty set");
  NoGradGuard no_grad;
  std::vector<std::vector<Tensor>> parts(m.config.modalities.size());
  for_chunks(samples, batch, [&](const std::vector<const model::Sample*>& ptrs) {
    const model::Prediction p = model::predict(m, model::make_batch(m.config, ptrs));
    for (std::size_t i = 0; i < parts.size(); ++i) parts[i].push_back(p.embeddings[i]);
  });
  std::vector<Tensor> out;
  for (auto& p : parts) out.push_back(p.size() == 1 ? p.front() : ops::concat(p, 0));
  return out;
}

Evaluation evaluate(const model::SplitModel& m, const std::vector<model::Sample>& samples, std::size_t batch,
                    std::size_t recall_k) {
  if (samples.empty()) throw MetricError("empty evaluation set");
  NoGradGuard no_grad;
  Evaluation ev;
  if (m.config.task == model::Task::kClassification) {
    std::vector<Tensor> logits;
    std::vector<std::size_t> labels;
    for_chunks(samples, batch, [&](const std::vector<const model::Sample*>& ptrs) {
      logits.push_back(model::predict(m, model::make_batch(m.config, ptrs)).logits);
      for (const auto* s : ptrs) labels.push_back(s->label);
    });
    const Tensor all = logits.size() == 1 ? logits.front() : ops::concat(logits, 0);
    ev.metric = "accuracy";
    ev.value = analysis::accuracy(all, labels);
    ev.loss = model::cross_entropy(all, labels).item();
    return ev;
  }
  const auto emb = embed(m, samples, batch);
  const Tensor sim = ops::matmul(emb[0], ops::transpose(emb[1]));
  ev.metric = "recall@" + std::to_string(recall_k);
  ev.value = analysis::recall_at_k(sim, std::min(recall_k, samples.size())).mean();
  const Tensor scaled = ops::scale_by(sim, ops::exp(m.server.tail.logit_scale));
  ev.loss = samples.size() >= 2 ? model::symmetric_cross_entropy(scaled).item() : 0.0;
  return ev;
}

}  // namespace mpsl::protocol
