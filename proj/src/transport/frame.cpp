// SPDX-License-Identifier: Apache-2.0

#include "mpsl/transport/frame.hpp"

#include <cstring>

#include "mpsl/errors.hpp"
#include "mpsl/serialize.hpp"

namespace mpsl::transport {

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::kRegister: return "Register";
    case MsgType::kActivations: return "Activations";
    case MsgType::kPrediction: return "Prediction";
    case MsgType::kLoss: return "Loss";
    case MsgType::kCutGrad: return "CutGrad";
    case MsgType::kModelPull: return "ModelPull";
    case MsgType::kModelPush: return "ModelPush";
    case MsgType::kAbort: return "Abort";
  }
  return "?";
}

void encode_frame(const Frame& f, std::vector<std::uint8_t>& out) {
  ByteWriter w(out);
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(f.round);
  w.u32(f.client_id);
  w.u64(f.payload.size());
  w.bytes(f.payload);
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  std::vector<std::uint8_t> out;
  out.reserve(f.encoded_size());
  encode_frame(f, out);
  return out;
}

HeaderInfo decode_header(std::span<const std::uint8_t> header, std::size_t base_offset) {
  ByteReader r(header, base_offset);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DecodeError("bad frame magic", base_offset);
  const std::uint8_t version = r.u8();
  if (version != kVersion) throw DecodeError("unsupported frame version " + std::to_string(version), base_offset + 4);
  const std::uint8_t type = r.u8();
  if (type > static_cast<std::uint8_t>(MsgType::kAbort)) {
    throw DecodeError("unknown message type " + std::to_string(type), base_offset + 5);
  }
  HeaderInfo h{static_cast<MsgType>(type), 0, 0, 0};
  h.round = r.u32();
  h.client_id = r.u32();
  h.payload_len = r.u64();
  return h;
}

namespace {

Frame decode_at(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t& consumed) {
  const auto rest = bytes.subspan(offset);
  if (rest.size() < kHeaderSize) {
    throw DecodeError("truncated frame header (" + std::to_string(rest.size()) + " of 22 bytes)", offset + rest.size());
  }
  const HeaderInfo h = decode_header(rest.first(kHeaderSize), offset);
  if (h.payload_len > rest.size() - kHeaderSize) {
    throw DecodeError("truncated payload: declared " + std::to_string(h.payload_len) + " bytes, " +
                          std::to_string(rest.size() - kHeaderSize) + " available",
                      offset + rest.size());
  }
  Frame f;
  f.type = h.type;
  f.round = h.round;
  f.client_id = h.client_id;
  const auto p = rest.subspan(kHeaderSize, h.payload_len);
  f.payload.assign(p.begin(), p.end());
  consumed = kHeaderSize + h.payload_len;
  return f;
}

}  // namespace

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  std::size_t used = 0;
  Frame f = decode_at(bytes, 0, used);
  if (used != bytes.size()) {
    throw DecodeError("payload length mismatch: " + std::to_string(bytes.size() - used) + " trailing bytes", used);
  }
  return f;
}

std::vector<Frame> decode_stream(std::span<const std::uint8_t> bytes) {
  std::vector<Frame> out;
  std::size_t off = 0;
  while (off < bytes.size()) {
    std::size_t used = 0;
    out.push_back(decode_at(bytes, off, used));
    off += used;
  }
  return out;
}

std::vector<std::uint8_t> tensors_payload(std::span<const Tensor> tensors, DType wire) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  for (const auto& t : tensors) write_tensor(w, t, wire);
  return out;
}

std::vector<Tensor> payload_tensors(std::span<const std::uint8_t> payload) {
  ByteReader r(payload, kHeaderSize);
  std::vector<Tensor> out;
  while (!r.done()) out.push_back(read_tensor(r));
  return out;
}

std::vector<std::uint8_t> encode_loss(const LossPayload& p, DType wire) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.f32(p.loss);
  w.u32(p.count);
  write_tensor(w, p.sensitivity, wire);
  return out;
}

LossPayload decode_loss(std::span<const std::uint8_t> payload) {
  ByteReader r(payload, kHeaderSize);
  LossPayload p;
  p.loss = r.f32();
  p.count = r.u32();
  p.sensitivity = read_tensor(r);
  if (!r.done()) throw DecodeError("trailing bytes in Loss payload", r.absolute());
  return p;
}

std::vector<std::uint8_t> encode_model_push(const ModelPushPayload& p, DType wire) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.u32(p.samples);
  for (const auto& t : p.params) write_tensor(w, t, wire);
  return out;
}

ModelPushPayload decode_model_push(std::span<const std::uint8_t> payload) {
  ByteReader r(payload, kHeaderSize);
  ModelPushPayload p;
  p.samples = r.u32();
  while (!r.done()) p.params.push_back(read_tensor(r));
  return p;
}

Frame make_frame(MsgType type, std::uint32_t round, std::uint32_t client, std::vector<std::uint8_t> payload) {
  return Frame{type, round, client, std::move(payload)};
}

Frame abort_frame(std::uint32_t round, std::uint32_t client, const std::string& reason) {
  return Frame{MsgType::kAbort, round, client, std::vector<std::uint8_t>(reason.begin(), reason.end())};
}

}  // namespace mpsl::transport
