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

#include "actbev/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "actbev/errors.hpp"

namespace actbev::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr const char* kMagic = "ACTBEV-CHECKPOINT 1";
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

LinearParams LinearParams::uniform_init(std::size_t c_in, std::size_t c_out, Rng& rng) {
  return {uniform_tensor({c_out, c_in}, std::sqrt(1.0 / static_cast<double>(c_in)), rng), Tensor({c_out})};
}

LinearParams LinearParams::zeros(std::size_t c_in, std::size_t c_out) {
  return {Tensor({c_out, c_in}), Tensor({c_out})};
}

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(value));
}

void ParamStore::add_linear(const std::string& prefix, LinearParams p) {
  add(prefix + ".weight", std::move(p.weight));
  add(prefix + ".bias", std::move(p.bias));
}

std::size_t ParamStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

LinearParams ParamStore::linear(const std::string& prefix) const {
  return {get(prefix + ".weight"), get(prefix + ".bias")};
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool requires_grad) : store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) vars_.push_back(tape.leaf(store.tensor(i), requires_grad));
}

std::vector<Tensor> BoundParams::grads(const Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(tape.grad(v));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "actbev-checkpoint";
  header["version"] = 1;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.tensor(i);
    header["tensors"].push_back({{"name", store.name(i)}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n' << text.size() << '\n' << text;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.tensor(i);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw IoError("not an actbev checkpoint: " + path.string());
  std::string len_line;
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw IoError("corrupt checkpoint header length: " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  ParamStore store;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint data: " + path.string());
    store.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return store;
}

}  // namespace actbev::nn
