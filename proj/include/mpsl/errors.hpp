// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpsl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dims disagree with what an op requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition (non-scalar loss, missing grad, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data is out of range (bad label, token id, signal too short).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Message sequencing violated on either side of the cut layer.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// The server was asked to run its backward pass before every expected
// client reported a loss.
class BarrierError : public ProtocolError {
 public:
  BarrierError(const std::string& what, std::vector<std::uint32_t> absentees)
      : ProtocolError(what), absentees_(std::move(absentees)) {}
  const std::vector<std::uint32_t>& absentees() const { return absentees_; }

 private:
  std::vector<std::uint32_t> absentees_;
};

class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpsl
