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

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "actbev/tensor.hpp"

namespace actbev::nn {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// reverse creation order is always a valid reverse topological order.
///
/// A tape is single-writer: one forward/backward at a time.
class Tape {
 public:
  /// Propagates the node's gradient into its parents' gradients.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  /// Adds a computed node. It requires grad iff any parent does; `fn` is
  /// dropped otherwise.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Tensor grad(Var v) const;
  /// Gradient buffer of the node being processed (read-only view).
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  /// Accumulation target for a parent gradient, allocated on first use.
  /// Returns nullptr when the node does not require grad.
  Tensor* grad_target(std::size_t id);
  Tensor* grad_target(Var v) { return grad_target(v.id()); }

  /// Seeds d(root)/d(root) = 1 (root must be scalar) and runs the backward
  /// closures in reverse creation order.
  void backward(Var root);
  /// Same, with an explicit processing order. Throws std::invalid_argument
  /// unless `order` lists every ancestor of root exactly once with each node
  /// before all of its parents.
  void backward(Var root, std::span<const std::size_t> order);
  /// Depth-first reverse topological order of root's ancestors. The two
  /// `parents_reversed` settings visit parents in opposite order and
  /// therefore generally give different valid orders.
  std::vector<std::size_t> dfs_reverse_topological(Var root, bool parents_reversed) const;

  void zero_grad();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void seed(Var root);

  std::vector<Node> nodes_;
};

}  // namespace actbev::nn
