// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpsl/tensor.hpp"

namespace mpsl {

// Backpropagates from a scalar loss. Every requires_grad leaf reachable from
// the loss accumulates into its grad; nothing else is touched. The graph is
// retained, so a second call accumulates the same gradient again.
void backward(const Tensor& loss);

// Backpropagates from an arbitrary tensor seeded with d(objective)/d(root).
void backward(const Tensor& root, std::span<const double> seed);

// Process-wide count of backward() invocations.
std::uint64_t backward_invocations();

// While alive, ops on this thread record no graph (inference only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

struct GraphNode {
  std::string op;
  std::vector<const void*> inputs;
  const void* output = nullptr;
};

// Read-only view of the autograd DAG below a root, in topological order
// (inputs before consumers). Used for inspection and tests.
class Graph {
 public:
  static Graph trace(const Tensor& root, std::uint64_t seed = 0);

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  std::uint64_t seed() const { return seed_; }
  // True if `t` is the root or an ancestor of it.
  bool contains(const Tensor& t) const;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<const void*> all_;
  std::uint64_t seed_ = 0;
};

}  // namespace mpsl
