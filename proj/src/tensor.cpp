// SPDX-License-Identifier: Apache-2.0

#include "mpsl/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "mpsl/errors.hpp"

namespace mpsl {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* to_string(DType dtype) { return dtype == DType::kFloat32 ? "float32" : "float64"; }

double round_to(DType dtype, double value) {
  return dtype == DType::kFloat32 ? static_cast<double>(static_cast<float>(value)) : value;
}

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data, DType dtype) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  if (dtype == DType::kFloat32) {
    for (auto& v : data) v = round_to(dtype, v);
  }
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) {
  const std::size_t n = mpsl::numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0), dtype));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const std::size_t n = mpsl::numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value), dtype));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, DType dtype) {
  return Tensor(make_impl(std::move(shape), std::move(data), dtype));
}

Tensor Tensor::scalar(double value, DType dtype) { return from_data({}, {value}, dtype); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

DType Tensor::dtype() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->dtype;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::data_mut() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (!on && impl_->grad_fn) throw ContractError("cannot stop gradients on an interior node; use detach()");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && impl_->grad.has_value(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return *impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (!impl_->grad) impl_->grad.emplace(impl_->data.size(), 0.0);
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::clear_grad() {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const { return Tensor(make_impl(shape(), impl_->data, impl_->dtype)); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::to(DType dtype) const { return Tensor(make_impl(shape(), impl_->data, dtype)); }

}  // namespace mpsl
