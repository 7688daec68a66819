// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mpsl/errors.hpp"
#include "mpsl/ops.hpp"

namespace mpsl::model {

namespace {

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be 2-D, got " + to_string(logits.shape()));
  if (labels.size() != logits.dim(0)) {
    throw DataError("got " + std::to_string(labels.size()) + " labels for a batch of " +
                    std::to_string(logits.dim(0)));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.dim(1)) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " is out of range for " + std::to_string(logits.dim(1)) + " classes");
    }
  }
}

void check_square(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
    throw ShapeError("score matrix must be square, got " + to_string(scores.shape()));
  }
  if (scores.dim(0) < 2) throw DataError("contrastive loss needs a batch of at least 2 (no negatives)");
}

std::vector<std::size_t> diagonal(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Row-wise cross-entropy on a row-major [rows, cols] view; adds scale *
// dL/dz into grad (with element (i, j) stored at grad[i * gs_row + j * gs_col]).
double ce_rows(const double* z, std::size_t rows, std::size_t cols, std::size_t zs_row, std::size_t zs_col,
               std::span<const std::size_t> labels, double scale, std::vector<double>& grad, std::size_t gs_row,
               std::size_t gs_col) {
  double total = 0.0;
  std::vector<double> p(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, z[i * zs_row + j * zs_col]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += (p[j] = std::exp(z[i * zs_row + j * zs_col] - mx));
    total += std::log(s) + mx - z[i * zs_row + labels[i] * zs_col];
    for (std::size_t j = 0; j < cols; ++j) {
      const double g = p[j] / s - (j == labels[i] ? 1.0 : 0.0);
      grad[i * gs_row + j * gs_col] += scale * g / static_cast<double>(rows);
    }
  }
  return total / static_cast<double>(rows);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  return ops::scale(ops::mean(ops::pick(ops::log_softmax(logits), labels)), -1.0);
}

Tensor symmetric_cross_entropy(const Tensor& scores) {
  check_square(scores);
  const auto diag = diagonal(scores.dim(0));
  const Tensor rows = cross_entropy(scores, diag);
  const Tensor cols = cross_entropy(ops::transpose(scores), diag);
  return ops::scale(ops::add(rows, cols), 0.5);
}

Tensor contrastive_loss(const Tensor& emb_a, const Tensor& emb_b, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  if (emb_a.shape() != emb_b.shape() || emb_a.rank() != 2) {
    throw ShapeError("embedding batches differ: " + to_string(emb_a.shape()) + " vs " + to_string(emb_b.shape()));
  }
  return symmetric_cross_entropy(ops::scale(ops::matmul(emb_a, ops::transpose(emb_b)), 1.0 / tau));
}

Tensor aggregate_losses(std::span<const ClientLoss> losses) {
  if (losses.empty()) throw ProtocolError("no client losses to aggregate");
  std::size_t total = 0;
  for (const auto& l : losses) {
    if (l.count == 0) throw ProtocolError("client loss with empty batch");
    if (l.loss.numel() != 1) throw ShapeError("client loss must be a scalar");
    total += l.count;
  }
  Tensor acc;
  for (const auto& l : losses) {
    const Tensor term = ops::scale(l.loss, static_cast<double>(l.count) / static_cast<double>(total));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

LossEval evaluate_loss(Task task, const Tensor& logits, std::span<const std::size_t> labels) {
  LossEval out;
  out.sensitivity.assign(logits.numel(), 0.0);
  const double* z = logits.data().data();
  if (task == Task::kClassification) {
    check_labels(logits, labels);
    const std::size_t c = logits.dim(1);
    out.value = ce_rows(z, logits.dim(0), c, c, 1, labels, 1.0, out.sensitivity, c, 1);
    return out;
  }
  check_square(logits);
  const std::size_t n = logits.dim(0);
  const auto diag = diagonal(n);
  const double r = ce_rows(z, n, n, n, 1, diag, 0.5, out.sensitivity, n, 1);
  const double col = ce_rows(z, n, n, 1, n, diag, 0.5, out.sensitivity, 1, n);
  out.value = 0.5 * (r + col);
  return out;
}

}  // namespace mpsl::model
