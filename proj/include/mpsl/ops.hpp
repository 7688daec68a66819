// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mpsl/tensor.hpp"

// Differentiable tensor ops. All inputs must share a dtype; results take it.
namespace mpsl::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product: [B, m, k] x [B, k, n] -> [B, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Multiplies every element by a one-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& factor);
// a[..., n] + bias[n]
Tensor add_bias(const Tensor& a, const Tensor& bias);
// a[..., s...] + b[s...]: b broadcast over the leading axes of a.
Tensor add_broadcast(const Tensor& a, const Tensor& b);
// x[..., k] * w[k, n] (+ b[n])
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);
// out[i] = x[i, index[i]] for a 2-D x.
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Scales every vector along the last axis to unit L2 norm.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

Tensor concat(std::span<const Tensor> tensors, int axis);
Tensor concat(std::initializer_list<Tensor> tensors, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
// [B, S, d] -> [B, d]
Tensor global_average_pool(const Tensor& x);
// Rows of table[V, d] selected by ids -> [len(ids), d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Scalar whose value is supplied from outside the graph and whose gradient
// with respect to `source` is the given sensitivity d(value)/d(source).
// Joins a loss computed elsewhere back onto the graph that produced `source`.
Tensor external_scalar(const Tensor& source, double value, std::span<const double> sensitivity);

}  // namespace mpsl::ops
