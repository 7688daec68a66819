// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mpsl/model/config.hpp"
#include "mpsl/tensor.hpp"

namespace mpsl::model {

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Mean of the row-wise and column-wise cross-entropies of a square score
// matrix whose diagonal holds the positives.
Tensor symmetric_cross_entropy(const Tensor& scores);

// Symmetric InfoNCE over unit-norm embeddings at temperature tau.
Tensor contrastive_loss(const Tensor& emb_a, const Tensor& emb_b, double tau);

struct ClientLoss {
  Tensor loss;        // scalar L_Cn
  std::size_t count;  // |B_n|
};

// L_S = sum_n (|B_n| / |B|) L_Cn, on the graph.
Tensor aggregate_losses(std::span<const ClientLoss> losses);

/// Loss value and its gradient with respect to the logits, computed in
/// closed form so the client needs no autograd pass.
struct LossEval {
  double value = 0.0;
  std::vector<double> sensitivity;
};

// Classification: cross-entropy against `labels`. Retrieval: symmetric
// cross-entropy with diagonal positives (`labels` unused).
LossEval evaluate_loss(Task task, const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace mpsl::model
