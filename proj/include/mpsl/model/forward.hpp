// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "mpsl/model/inputs.hpp"
#include "mpsl/model/model.hpp"

namespace mpsl::model {

// Tokenizers on pre-patchified input. patches: [B, P, patch_dim] -> [B, P+1, d].
Tensor tokenize_patches(const Tokenizer& t, const Tensor& patches);
// ids: [B * len] -> [B, len+1, d].
Tensor tokenize_ids(const Tokenizer& t, std::span<const std::size_t> ids, std::size_t batch, std::size_t len);

// Single-sample conveniences -> [seq, d].
Tensor tokenize_vision(const ModelConfig& c, const Tokenizer& t, std::span<const double> image);
Tensor tokenize_audio(const ModelConfig& c, const Tokenizer& t, std::span<const double> signal);
Tensor tokenize_text(const Tokenizer& t, std::span<const std::size_t> ids);

/// Cut-layer activations sent from client to server. Early fusion holds one
/// [B, seq_total, d] tensor; late fusion holds one [B, seq_m, d] tensor per
/// modality, in config order.
struct Activations {
  Fusion fusion = Fusion::kEarly;
  std::vector<Modality> modalities;
  std::vector<Tensor> tensors;
  std::vector<std::size_t> segments;  // tokens per modality

  std::size_t batch() const;
};

Activations client_forward(const ModelConfig& c, const ClientHead& head, const InputBatch& batch);

// Pre-norm transformer blocks; empty `blocks` is the identity.
Tensor encoder_forward(const Tensor& x, const std::vector<EncoderBlock>& blocks, std::size_t heads);

/// Server output. `logits` is what the client's loss consumes: class logits
/// [B, C] for classification, scaled similarities [B, B] between the first two
/// modalities for retrieval. `embeddings` holds the unit-norm per-modality
/// retrieval embeddings [B, proj_dim].
struct Prediction {
  Tensor logits;
  std::vector<Tensor> embeddings;
};

Prediction server_predict(const ModelConfig& c, const ServerModel& server, const Activations& a);

// Monolithic convenience: server_predict(client_forward(...)).
Prediction predict(const SplitModel& m, const InputBatch& batch);

}  // namespace mpsl::model
