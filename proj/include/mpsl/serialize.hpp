// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mpsl/bytes.hpp"
#include "mpsl/tensor.hpp"

// Tensor wire format, shared by frames, checkpoints and dataset files:
//   u8 dtype (0 = float32, 1 = float64) | u8 rank | u32 dims[rank] | data
// All integers and scalars little-endian, data row-major.
namespace mpsl {

std::size_t serialized_size(const Shape& shape, DType dtype);
void write_tensor(ByteWriter& w, const Tensor& t);
void write_tensor(ByteWriter& w, const Tensor& t, DType wire_dtype);
Tensor read_tensor(ByteReader& r);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mpsl
