// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpsl/bytes.hpp"
#include "mpsl/tensor.hpp"

namespace mpsl::transport {

enum class MsgType : std::uint8_t {
  kRegister = 0,
  kActivations = 1,
  kPrediction = 2,
  kLoss = 3,
  kCutGrad = 4,
  kModelPull = 5,
  kModelPush = 6,
  kAbort = 7,
};
const char* to_string(MsgType t);

inline constexpr char kMagic[4] = {'M', 'P', 'S', 'L'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 22;

// Wire layout (little-endian): magic[4] | u8 version | u8 msg_type |
// u32 round | u32 client_id | u64 payload_len | payload.
struct Frame {
  MsgType type = MsgType::kRegister;
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  std::vector<std::uint8_t> payload;

  std::size_t encoded_size() const { return kHeaderSize + payload.size(); }
  bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode_frame(const Frame& f);
void encode_frame(const Frame& f, std::vector<std::uint8_t>& out);

// Decodes exactly one frame spanning all of `bytes`.
Frame decode_frame(std::span<const std::uint8_t> bytes);

struct HeaderInfo {
  MsgType type;
  std::uint32_t round;
  std::uint32_t client_id;
  std::uint64_t payload_len;
};
// Validates a 22-byte header.
HeaderInfo decode_header(std::span<const std::uint8_t> header, std::size_t base_offset = 0);

// Splits a concatenated stream into frames.
std::vector<Frame> decode_stream(std::span<const std::uint8_t> bytes);

// Payload codecs. Tensors use the tensor serialization format, back to back.
std::vector<std::uint8_t> tensors_payload(std::span<const Tensor> tensors, DType wire);
std::vector<Tensor> payload_tensors(std::span<const std::uint8_t> payload);

/// Loss upload: f32 loss | u32 batch count | sensitivity tensor
/// d(loss)/d(prediction), which the server needs to continue the backward
/// pass through its own graph.
struct LossPayload {
  float loss = 0.0f;
  std::uint32_t count = 0;
  Tensor sensitivity;
};
std::vector<std::uint8_t> encode_loss(const LossPayload& p, DType wire);
LossPayload decode_loss(std::span<const std::uint8_t> payload);

/// FedAvg upload: u32 local sample count | parameter tensors.
struct ModelPushPayload {
  std::uint32_t samples = 0;
  std::vector<Tensor> params;
};
std::vector<std::uint8_t> encode_model_push(const ModelPushPayload& p, DType wire);
ModelPushPayload decode_model_push(std::span<const std::uint8_t> payload);

Frame make_frame(MsgType type, std::uint32_t round, std::uint32_t client, std::vector<std::uint8_t> payload);
Frame abort_frame(std::uint32_t round, std::uint32_t client, const std::string& reason);

}  // namespace mpsl::transport
