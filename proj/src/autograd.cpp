// SPDX-License-Identifier: Apache-2.0

#include "mpsl/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_map>
#include <unordered_set>

#include "mpsl/errors.hpp"

namespace mpsl {

namespace {

using detail::TensorImpl;

std::atomic<std::uint64_t> g_backward_calls{0};

// Post-order DFS: every node appears after all of its inputs.
std::vector<TensorImpl*> topo_order(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

void backward(const Tensor& root, std::span<const double> seed) {
  if (!root.defined()) throw ContractError("backward on undefined tensor");
  if (seed.size() != root.numel()) {
    throw ContractError("backward seed has " + std::to_string(seed.size()) + " values for tensor " +
                        to_string(root.shape()));
  }
  ++g_backward_calls;
  if (!root.requires_grad()) return;

  TensorImpl* root_impl = root.impl().get();
  const auto order = topo_order(root_impl);
  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[root_impl].assign(seed.begin(), seed.end());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    std::vector<double> g = std::move(found->second);
    grads.erase(found);

    if (!node->grad_fn) {
      if (!node->grad) {
        node->grad = std::move(g);
      } else {
        auto& acc = *node->grad;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      }
      continue;
    }
    const auto& fn = *node->grad_fn;
    std::vector<std::vector<double>> grad_in(fn.inputs.size());
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      if (fn.inputs[i]->requires_grad) grad_in[i].assign(fn.inputs[i]->data.size(), 0.0);
    }
    fn.backward(g, grad_in);
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      if (grad_in[i].empty()) continue;
      auto& slot = grads[fn.inputs[i].get()];
      if (slot.empty()) {
        slot = std::move(grad_in[i]);
      } else {
        for (std::size_t j = 0; j < slot.size(); ++j) slot[j] += grad_in[i][j];
      }
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1 || !loss.shape().empty()) {
    throw ContractError("backward(loss) needs a scalar, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

std::uint64_t backward_invocations() { return g_backward_calls.load(); }

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Graph Graph::trace(const Tensor& root, std::uint64_t seed) {
  Graph g;
  g.seed_ = seed;
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root.impl().get(), 0}};
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  for (TensorImpl* node : order) {
    g.all_.push_back(node);
    if (!node->grad_fn) continue;
    GraphNode rec;
    rec.op = node->grad_fn->op;
    rec.output = node;
    for (const auto& in : node->grad_fn->inputs) rec.inputs.push_back(in.get());
    g.nodes_.push_back(std::move(rec));
  }
  return g;
}

bool Graph::contains(const Tensor& t) const {
  return std::find(all_.begin(), all_.end(), t.id()) != all_.end();
}

}  // namespace mpsl
