// SPDX-License-Identifier: Apache-2.0

#include "mpsl/serialize.hpp"

#include <fstream>
#include <iterator>
#include <limits>

namespace mpsl {

std::size_t serialized_size(const Shape& shape, DType dtype) {
  return 2 + 4 * shape.size() + numel(shape) * (dtype == DType::kFloat32 ? 4 : 8);
}

void write_tensor(ByteWriter& w, const Tensor& t) { write_tensor(w, t, t.dtype()); }

void write_tensor(ByteWriter& w, const Tensor& t, DType wire_dtype) {
  const Shape& s = t.shape();
  if (s.size() > 255) throw ShapeError("tensor rank " + std::to_string(s.size()) + " exceeds 255");
  w.u8(static_cast<std::uint8_t>(wire_dtype));
  w.u8(static_cast<std::uint8_t>(s.size()));
  for (std::size_t d : s) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("tensor dim exceeds 32 bits");
    w.u32(static_cast<std::uint32_t>(d));
  }
  if (wire_dtype == DType::kFloat32) {
    for (double v : t.data()) w.f32(static_cast<float>(v));
  } else {
    for (double v : t.data()) w.f64(v);
  }
}

Tensor read_tensor(ByteReader& r) {
  const std::size_t start = r.absolute();
  const std::uint8_t tag = r.u8();
  if (tag > 1) throw DecodeError("unknown tensor dtype tag " + std::to_string(tag), start);
  const DType dtype = static_cast<DType>(tag);
  const std::uint8_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = numel(shape);
  const std::size_t width = dtype == DType::kFloat32 ? 4 : 8;
  if (n != 0 && r.remaining() / width < n) {
    throw DecodeError("tensor data truncated: " + std::to_string(n) + " values declared", r.absolute());
  }
  std::vector<double> data(n);
  for (auto& v : data) v = dtype == DType::kFloat32 ? static_cast<double>(r.f32()) : r.f64();
  return Tensor::from_data(std::move(shape), std::move(data), dtype);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::vector<std::uint8_t> buf;
  ByteWriter w(buf);
  write_tensor(w, t);
  write_file(path, buf);
}

Tensor load_tensor(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  ByteReader r(buf);
  Tensor t = read_tensor(r);
  if (!r.done()) throw DecodeError("trailing bytes after tensor in " + path.string(), r.absolute());
  return t;
}

}  // namespace mpsl
