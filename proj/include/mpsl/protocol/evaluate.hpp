// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mpsl/model/forward.hpp"

namespace mpsl::protocol {

struct Evaluation {
  std::string metric;  // "accuracy" or "recall@K"
  double value = 0.0;
  double loss = 0.0;   // mean test loss (classification) or full-set contrastive loss
};

// Classification: accuracy over the set. Retrieval: recall@k over the whole
// set, averaged over both directions.
Evaluation evaluate(const model::SplitModel& m, const std::vector<model::Sample>& samples, std::size_t batch,
                    std::size_t recall_k = 1);

// Per-modality unit-norm retrieval embeddings for a whole set, [n, proj_dim] each.
std::vector<Tensor> embed(const model::SplitModel& m, const std::vector<model::Sample>& samples, std::size_t batch);

}  // namespace mpsl::protocol
