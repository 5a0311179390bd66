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
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/rng.hpp"
#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::nn {

/// y = x W^T + b parameters; weight [C_out, C_in], bias [C_out].
struct LinearParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  /// Weights uniform in +-sqrt(1 / C_in), zero bias.
  static LinearParams uniform_init(std::size_t c_in, std::size_t c_out, Rng& rng);
  static LinearParams zeros(std::size_t c_in, std::size_t c_out);
};

/// Uniform +-bound tensor.
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

/// Ordered, named parameter collection.
class ParamStore {
 public:
  /// Throws std::invalid_argument on a duplicate name.
  void add(const std::string& name, Tensor value);
  void add_linear(const std::string& prefix, LinearParams p);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Tensor& get(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& get(const std::string& name) const { return tensors_[index_of(name)]; }
  LinearParams linear(const std::string& prefix) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  std::size_t total_numel() const;

  bool operator==(const ParamStore& other) const {
    return names_ == other.names_ && tensors_ == other.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A ParamStore bound to a tape as leaf variables.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool requires_grad = true);

  const Var& operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }
  const Var& at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  /// Gradients of every parameter after a backward pass, in store order.
  std::vector<Tensor> grads(const Tape& tape) const;

 private:
  const ParamStore* store_;
  std::vector<Var> vars_;
};

/// Checkpoint file: a text magic line, a JSON header naming each tensor's
/// shape and offset, then raw little-endian doubles. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta);
/// Throws IoError on unreadable or malformed files.
ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace actbev::nn
