// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpsl {

using Shape = std::vector<std::size_t>;

// Storage is always double; float32 tensors hold values that are exactly
// representable as float (every op result is rounded), so they serialize
// to 4 bytes without loss.
enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
const char* to_string(DType dtype);

class Tensor;

namespace detail {

struct TensorImpl;

// Receives d(root)/d(output) and returns d(root)/d(input_i) for each input;
// entries for inputs that do not require grad are left empty.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::vector<std::vector<double>>& grad_in)>;

struct GradFn {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::kFloat64;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  std::shared_ptr<GradFn> grad_fn;
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode autograd.
///
/// Tensor is a shared handle: copying it aliases the same storage and graph
/// node. Use clone() for an independent copy of a parameter.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kFloat64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat64);
  static Tensor from_data(Shape shape, std::vector<double> data, DType dtype = DType::kFloat64);
  static Tensor scalar(double value, DType dtype = DType::kFloat64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameters, inputs); mutating an
  // interior node invalidates the saved values of its consumers.
  std::span<double> data_mut();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();
  void clear_grad();

  // New leaf with copied data and no history.
  Tensor detach() const;
  // Leaf copy that keeps requires_grad; gradient storage is not copied.
  Tensor clone() const;
  // Same tensor converted to another dtype (leaf, no history).
  Tensor to(DType dtype) const;

  const void* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

double round_to(DType dtype, double value);

}  // namespace mpsl
