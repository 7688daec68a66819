// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mpsl/tensor.hpp"

namespace mpsl {

using NamedTensor = std::pair<std::string, Tensor>;

/// SGD with heavy-ball momentum: v <- momentum * v + grad; p <- p - lr * v.
/// Gradients are zeroed after every step. momentum = 0 is plain SGD.
/// With max_grad_norm > 0 the gradients of this parameter group are scaled
/// down to that global L2 norm before the update.
class Sgd {
 public:
  Sgd(std::vector<NamedTensor> params, double lr, double momentum = 0.9);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }
  void set_max_grad_norm(double n);
  double max_grad_norm() const { return max_grad_norm_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double max_grad_norm_ = 0.0;
};

}  // namespace mpsl
