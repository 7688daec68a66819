// SPDX-License-Identifier: Apache-2.0

#include "mpsl/optim.hpp"

#include <cmath>

#include "mpsl/errors.hpp"

namespace mpsl {

Sgd::Sgd(std::vector<NamedTensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (!(lr >= 0.0)) throw ContractError("sgd: learning rate must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("sgd: momentum must be in [0, 1)");
  velocity_.reserve(params_.size());
  for (const auto& [name, p] : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::set_max_grad_norm(double n) {
  if (!(n >= 0.0)) throw ContractError("sgd: max_grad_norm must be non-negative");
  max_grad_norm_ = n;
}

void Sgd::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) throw ContractError("sgd: parameter '" + name + "' has no gradient");
  }
  double clip = 1.0;
  if (max_grad_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params_) {
      for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_grad_norm_) clip = max_grad_norm_ / norm;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    auto data = p.data_mut();
    auto grad = p.grad_mut();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = momentum_ * v[j] + clip * grad[j];
      data[j] = round_to(p.dtype(), data[j] - lr_ * v[j]);
    }
    p.zero_grad();
  }
}

void Sgd::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace mpsl
