// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "mpsl/data/synthetic.hpp"
#include "mpsl/model/model.hpp"
#include "mpsl/protocol/config.hpp"
#include "mpsl/protocol/trainer.hpp"

namespace mpsl::testing {

// d=16, L=2, vision + text, 4 classes.
inline model::ModelConfig tiny_config(DType dtype = DType::kFloat64) {
  model::ModelConfig c;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_size = 4;
  c.image_size = 8;
  c.vocab_size = 32;
  c.max_text_len = 8;
  c.num_classes = 4;
  c.proj_dim = 8;
  c.dtype = dtype;
  return c;
}

inline data::Dataset tiny_data(const model::ModelConfig& c, std::size_t per_class = 10, std::uint64_t seed = 1) {
  data::SyntheticSpec s;
  s.task = c.task;
  s.modalities = c.modalities;
  s.num_classes = c.num_classes;
  s.samples_per_class = per_class;
  s.num_pairs = per_class * c.num_classes;
  s.seed = seed;
  s.match(c);
  return data::generate(s);
}

// Round-robin split of the training set.
inline protocol::Shards even_shards(std::size_t n_train, std::size_t clients) {
  protocol::Shards s(clients);
  for (std::size_t i = 0; i < n_train; ++i) s[i % clients].push_back(i);
  return s;
}

inline protocol::TrainingConfig plain_sgd(std::size_t clients, std::size_t rounds, std::size_t batch) {
  protocol::TrainingConfig t;
  t.num_clients = clients;
  t.rounds = rounds;
  t.global_batch = batch;
  t.momentum = 0.0;
  t.eval_every = 0;
  return t;
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace mpsl::testing
