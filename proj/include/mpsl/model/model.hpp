// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpsl/model/config.hpp"
#include "mpsl/optim.hpp"
#include "mpsl/tensor.hpp"

namespace mpsl::model {

// Which part of W = [W_h; W_b; W_t] a parameter belongs to.
enum class Role : std::uint8_t { kHead, kBody, kTail };
const char* to_string(Role r);

struct ParamSpec {
  std::string name;
  Shape shape;
  Role role;
  bool trainable;
};

// Every parameter of the full model, in canonical order: head tokenizers in
// modality order, then encoder blocks, then the task tail. Pure function of
// the config, so it can size full-size models without allocating them.
std::vector<ParamSpec> parameter_specs(const ModelConfig& c);

std::size_t count_params(const ModelConfig& c, std::optional<Role> role = std::nullopt, bool trainable_only = false);

/// One modality tokenizer T_m. Vision and audio use a patch projection,
/// text uses a lookup table; all prepend a cls token and add learned
/// position embeddings.
struct Tokenizer {
  Modality modality = Modality::kVision;
  Tensor proj_w;  // [patch_dim, d]   (vision, audio)
  Tensor proj_b;  // [d]              (vision, audio)
  Tensor table;   // [vocab, d]       (text)
  Tensor cls;     // [d]
  Tensor pos;     // [max_seq, d]
};

struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;
  Tensor out_w, out_b;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;
};

struct Tail {
  Tensor ln_g, ln_b;
  Tensor w, b;
  Tensor logit_scale;  // retrieval only: log(1 / temperature)
};

/// Client-side model F_C = W_h.
struct ClientHead {
  std::vector<Tokenizer> tokenizers;  // config modality order

  const Tokenizer& tokenizer(Modality m) const;
  std::vector<NamedTensor> named() const;
  ClientHead clone() const;
};

/// Server-side model F_S = [W_b; W_t].
struct ServerModel {
  std::vector<EncoderBlock> blocks;
  Tail tail;

  std::vector<NamedTensor> named() const;
  ServerModel clone() const;
};

/// Full model W = [W_h; W_b; W_t].
struct SplitModel {
  ModelConfig config;
  ClientHead head;
  ServerModel server;

  std::vector<NamedTensor> named() const;
  SplitModel clone() const;
};

// Seeded init: truncated normal (std 0.02, cut at 2 std) for projections and
// embeddings, zeros for biases, ones for norm gains, log(1/tau) for the
// logit scale. requires_grad follows ParamSpec::trainable.
SplitModel init_model(const ModelConfig& c, std::uint64_t seed);

// Builds a model from named tensors (e.g. a checkpoint); every spec name
// must be present with the right shape.
SplitModel assemble(const ModelConfig& c, const std::map<std::string, Tensor>& params);

std::vector<NamedTensor> trainable(const std::vector<NamedTensor>& params);

// Copies parameter values from `src` into `dst` (same structure).
void copy_values(const std::vector<NamedTensor>& src, const std::vector<NamedTensor>& dst);

enum class ReassemblyMode : std::uint8_t { kPerClient, kFedAvg };

struct WeightedHead {
  const ClientHead* head;
  std::size_t samples;  // |D_n|
};

// Post-training reconstruction. kPerClient returns [F_Cn; F_S] for client
// `client`; kFedAvg averages all heads weighted by |D_n| and returns
// [F_C_agg; F_S]. The result owns copies of all parameters.
SplitModel reassemble(const ModelConfig& c, ReassemblyMode mode, const std::vector<WeightedHead>& heads,
                      const ServerModel& server, std::size_t client = 0);

// Weighted element-wise mean of structurally identical parameter lists.
// Weights must sum to 1.
std::vector<Tensor> weighted_average(const std::vector<std::vector<NamedTensor>>& sets,
                                     const std::vector<double>& weights);

}  // namespace mpsl::model
