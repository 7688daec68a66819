// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/checkpoint.hpp"

#include <cstring>
#include <map>

#include "mpsl/bytes.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/serialize.hpp"

namespace mpsl::model {

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& c, const std::vector<NamedTensor>& params) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  for (char ch : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  w.u64(config_digest(c));
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw ContractError("parameter name too long: " + name.substr(0, 32) + "...");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    write_tensor(w, t);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(8);
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) throw DecodeError("not a checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(version), 8);
  }
  Checkpoint ck;
  ck.config_digest = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    const auto name = r.bytes(len);
    std::string n(name.begin(), name.end());
    ck.params.emplace_back(std::move(n), read_tensor(r));
  }
  if (!r.done()) throw DecodeError("trailing bytes after checkpoint", r.absolute());
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& c, const std::vector<NamedTensor>& params) {
  write_file(path, encode_checkpoint(c, params));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

SplitModel load_model(const std::string& path, const ModelConfig& c) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config_digest != config_digest(c)) {
    throw ConfigError("checkpoint " + path + " was written for a different model config");
  }
  std::map<std::string, Tensor> by_name;
  for (const auto& [n, t] : ck.params) by_name.emplace(n, t);
  return assemble(c, by_name);
}

}  // namespace mpsl::model
