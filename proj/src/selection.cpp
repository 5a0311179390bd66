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

#include "actbev/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"

namespace actbev::selection {

void SelectionParams::validate() const {
  if (pe.weight.rank() != 2 || pe.in_features() != 16) throw std::invalid_argument("pose embedding must map 16 -> C_pe");
  if (mlp1.in_features() <= pe.out_features()) throw std::invalid_argument("selection MLP input narrower than C_pe");
  if (mlp2.in_features() != mlp1.out_features()) throw std::invalid_argument("selection MLP hidden width mismatch");
  if (mlp2.out_features() != 1) throw std::invalid_argument("selection MLP must produce a single logit");
  if (!(pose_scale > 0.0)) throw std::invalid_argument("pose scale must be positive");
}

SelectionParams SelectionParams::init(int query_dim, int pose_dim, int hidden, Rng& rng, double pose_scale) {
  SelectionParams p;
  p.pe = nn::LinearParams::uniform_init(16, static_cast<std::size_t>(pose_dim), rng);
  p.mlp1 = nn::LinearParams::uniform_init(static_cast<std::size_t>(query_dim + pose_dim),
                                          static_cast<std::size_t>(hidden), rng);
  p.mlp2 = nn::LinearParams::uniform_init(static_cast<std::size_t>(hidden), 1, rng);
  p.pose_scale = pose_scale;
  return p;
}

void SelectionParams::store_into(nn::ParamStore& store, const std::string& prefix) const {
  store.add_linear(prefix + ".pe", pe);
  store.add_linear(prefix + ".mlp1", mlp1);
  store.add_linear(prefix + ".mlp2", mlp2);
}

SelectionParams SelectionParams::load_from(const nn::ParamStore& store, const std::string& prefix,
                                           double pose_scale) {
  SelectionParams p;
  p.pe = store.linear(prefix + ".pe");
  p.mlp1 = store.linear(prefix + ".mlp1");
  p.mlp2 = store.linear(prefix + ".mlp2");
  p.pose_scale = pose_scale;
  p.validate();
  return p;
}

std::array<double, 16> pose_features(const geometry::HomTransform& t, double pose_scale) {
  auto v = t.row_major();
  v[3] /= pose_scale;
  v[7] /= pose_scale;
  v[11] /= pose_scale;
  return v;
}

namespace {

std::vector<double> affine(const nn::LinearParams& p, std::span<const double> x) {
  const std::size_t rows = p.out_features();
  const std::size_t cols = p.in_features();
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = p.bias[r];
    for (std::size_t c = 0; c < cols; ++c) s += p.weight.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

double stable_sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::vector<double> pose_embed(const geometry::HomTransform& t, const SelectionParams& params) {
  const auto f = pose_features(t, params.pose_scale);
  return affine(params.pe, f);
}

std::vector<InterestScoreMap> interest_scores(const Tensor& query_features, int h, int w,
                                              const std::vector<CameraChain>& chains, const SelectionParams& params) {
  params.validate();
  const auto c = static_cast<std::size_t>(params.query_dim());
  if (query_features.numel() != static_cast<std::size_t>(h * w) * c) {
    throw std::invalid_argument("query features do not match grid and selection width");
  }
  const std::size_t hidden = params.mlp1.out_features();
  const std::size_t cpe = static_cast<std::size_t>(params.pose_dim());
  std::vector<InterestScoreMap> maps;
  maps.reserve(chains.size());
  for (const auto& chain : chains) {
    const auto pe = pose_embed(chain.ego_from_cam, params);
    // The pose half of the first layer is shared by every cell of this map.
    std::vector<double> pose_part(hidden, 0.0);
    for (std::size_t r = 0; r < hidden; ++r) {
      double s = params.mlp1.bias[r];
      for (std::size_t k = 0; k < cpe; ++k) s += params.mlp1.weight.at(r, c + k) * pe[k];
      pose_part[r] = s;
    }
    InterestScoreMap m{chain.key.car_id, chain.key.cam_id, h, w, std::vector<double>(static_cast<std::size_t>(h * w))};
    for (std::size_t q = 0; q < m.scores.size(); ++q) {
      const double* x = query_features.data() + q * c;
      double logit = params.mlp2.bias[0];
      for (std::size_t r = 0; r < hidden; ++r) {
        double s = pose_part[r];
        for (std::size_t k = 0; k < c; ++k) s += params.mlp1.weight.at(r, k) * x[k];
        logit += params.mlp2.weight.at(0, r) * std::max(s, 0.0);
      }
      m.scores[q] = stable_sigmoid(logit);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

SelectionVars SelectionVars::bind(const nn::BoundParams& p, const std::string& prefix, int query_dim, int pose_dim,
                                  double pose_scale) {
  SelectionVars v;
  v.pe_w = p[prefix + ".pe.weight"];
  v.pe_b = p[prefix + ".pe.bias"];
  v.mlp1_w = p[prefix + ".mlp1.weight"];
  v.mlp1_b = p[prefix + ".mlp1.bias"];
  v.mlp2_w = p[prefix + ".mlp2.weight"];
  v.mlp2_b = p[prefix + ".mlp2.bias"];
  v.query_dim = query_dim;
  v.pose_dim = pose_dim;
  v.pose_scale = pose_scale;
  return v;
}

Var interest_scores(const Var& query_features, const std::vector<geometry::HomTransform>& chains,
                    const SelectionVars& vars) {
  if (chains.empty()) throw std::invalid_argument("interest_scores: no camera chains");
  nn::Tape& tape = *query_features.tape();
  const std::size_t g = chains.size();
  Tensor feats({g, 16});
  for (std::size_t i = 0; i < g; ++i) {
    const auto f = pose_features(chains[i], vars.pose_scale);
    std::copy(f.begin(), f.end(), feats.data() + i * 16);
  }
  const Var pe = nn::linear(tape.constant(std::move(feats)), vars.pe_w, vars.pe_b);
  const auto qd = static_cast<std::size_t>(vars.query_dim);
  const auto pd = static_cast<std::size_t>(vars.pose_dim);
  const Var hq = nn::linear(query_features, nn::slice_cols(vars.mlp1_w, 0, qd), vars.mlp1_b);
  const Var hp = nn::linear(pe, nn::slice_cols(vars.mlp1_w, qd, pd));
  const Var hidden = nn::relu(nn::pairwise_add(hq, hp));
  const Var logits = nn::linear(hidden, vars.mlp2_w, vars.mlp2_b);
  const std::size_t n = query_features.value().rows();
  return nn::sigmoid(nn::reshape(logits, {n, g}));
}

std::vector<ActiveMask> gate(const std::vector<InterestScoreMap>& scores, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1)");
  std::vector<ActiveMask> masks;
  masks.reserve(scores.size());
  for (const auto& s : scores) {
    ActiveMask m{s.car_id, s.cam_id, std::vector<char>(s.scores.size())};
    for (std::size_t i = 0; i < s.scores.size(); ++i) m.active[i] = s.scores[i] > epsilon ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<CarInterestMap> combine_by_car(const std::vector<InterestScoreMap>& scores) {
  std::map<int, CarInterestMap> cars;
  for (const auto& s : scores) {
    auto [it, inserted] = cars.try_emplace(s.car_id);
    CarInterestMap& c = it->second;
    if (inserted) {
      c.car_id = s.car_id;
      c.h = s.h;
      c.w = s.w;
      c.values.assign(s.scores.size(), 0.0);
    } else if (c.h != s.h || c.w != s.w) {
      throw std::invalid_argument("interest maps of one car disagree on grid size");
    }
    c.cam_ids.push_back(s.cam_id);
    for (std::size_t i = 0; i < s.scores.size(); ++i) c.values[i] += s.scores[i];
  }
  std::vector<CarInterestMap> out;
  for (auto& [id, c] : cars) {
    for (auto& v : c.values) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::filesystem::path> export_interest_maps(const std::vector<InterestScoreMap>& scores, int layer_idx,
                                                        const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create interest map directory " + dir.string() + ": " + ec.message());
  const auto manifest_path = dir / "interest_manifest.json";
  nlohmann::json manifest = {{"maps", nlohmann::json::array()}};
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("corrupt interest manifest: ") + e.what());
    }
  }
  std::vector<std::filesystem::path> written;
  for (const auto& car : combine_by_car(scores)) {
    const std::string name = fmt::format("layer{}_car{}.csv", layer_idx, car.car_id);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (int y = 0; y < car.h; ++y) {
      for (int x = 0; x < car.w; ++x) {
        if (x) out << ',';
        out << fmt::format("{:.17g}", car.values[static_cast<std::size_t>(y * car.w + x)]);
      }
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
    manifest["maps"].push_back(
        {{"layer", layer_idx}, {"car_id", car.car_id}, {"cameras", car.cam_ids}, {"h", car.h}, {"w", car.w}, {"file", name}});
    written.push_back(path);
  }
  std::ofstream mout(manifest_path, std::ios::trunc);
  if (!mout) throw IoError("cannot write " + manifest_path.string());
  mout << manifest.dump(2) << '\n';
  return written;
}

std::vector<std::vector<double>> read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("malformed number in " + path.string() + ": " + cell);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace actbev::selection
