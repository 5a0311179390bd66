// Copyright 2026 The ActBEV Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "actbev/tape.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace actbev::nn {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("parent variable belongs to a different tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return &n.grad;
}

void Tape::seed(Var root) {
  if (root.tape() != this) throw std::invalid_argument("root belongs to a different tape");
  if (nodes_[root.id()].value.numel() != 1) throw std::invalid_argument("backward root must be a scalar");
  zero_grad();
  if (Tensor* g = grad_target(root.id())) (*g)[0] = 1.0;
}

void Tape::backward(Var root) {
  seed(root);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

void Tape::backward(Var root, std::span<const std::size_t> order) {
  // Collect ancestors of root.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<std::size_t> stack{root.id()};
  reachable[root.id()] = 1;
  std::size_t n_reachable = 1;
  while (!stack.empty()) {
    const std::size_t id = stack.back();
    stack.pop_back();
    for (auto p : nodes_[id].parents) {
      if (!reachable[p]) {
        reachable[p] = 1;
        ++n_reachable;
        stack.push_back(p);
      }
    }
  }
  if (order.size() != n_reachable) throw std::invalid_argument("order does not cover the ancestors of root");
  std::vector<std::size_t> position(nodes_.size(), nodes_.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t id = order[k];
    if (id >= nodes_.size() || !reachable[id] || position[id] != nodes_.size()) {
      throw std::invalid_argument("order contains a foreign or repeated node");
    }
    position[id] = k;
  }
  for (auto id : order) {
    for (auto p : nodes_[id].parents) {
      if (position[p] <= position[id]) throw std::invalid_argument("order is not reverse topological");
    }
  }
  seed(root);
  for (auto id : order) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

std::vector<std::size_t> Tape::dfs_reverse_topological(Var root, bool parents_reversed) const {
  std::vector<std::size_t> post;
  std::vector<char> state(nodes_.size(), 0);  // 0 new, 1 open, 2 done
  std::vector<std::pair<std::size_t, std::size_t>> stack{{root.id(), 0}};
  state[root.id()] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& parents = nodes_[id].parents;
    if (next < parents.size()) {
      const std::size_t k = parents_reversed ? parents.size() - 1 - next : next;
      ++next;
      const std::size_t p = parents[k];
      if (state[p] == 0) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      state[id] = 2;
      post.push_back(id);
      stack.pop_back();
    }
  }
  std::reverse(post.begin(), post.end());
  return post;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor();
}

}  // namespace actbev::nn
