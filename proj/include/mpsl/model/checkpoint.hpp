// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpsl/model/model.hpp"

namespace mpsl::model {

inline constexpr char kCheckpointMagic[8] = {'M', 'P', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::vector<NamedTensor> params;
};

// Layout: magic, u32 version, u64 config digest, u32 count, then per
// parameter u16 name length, name bytes, serialized tensor.
std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& c, const std::vector<NamedTensor>& params);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const ModelConfig& c, const std::vector<NamedTensor>& params);
Checkpoint load_checkpoint(const std::string& path);

// Loads a full model; the stored digest must match `c`.
SplitModel load_model(const std::string& path, const ModelConfig& c);

}  // namespace mpsl::model
