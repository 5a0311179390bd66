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

#include "actbev/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"
#include "actbev/rng.hpp"

namespace actbev::perception {

using attention::RefPoint;
using attention::SampleEntry;
using attention::SamplePlan;
using attention::ValueSource;

void ModelConfig::validate() const {
  try {
    grid.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model.grid: ") + e.what());
  }
  if (channels < 1 || raw_channels < 1) throw ConfigError("model channel counts must be positive");
  if (feature_h < 1 || feature_w < 1) throw ConfigError("model feature map size must be positive");
  if (n_head < 1 || n_key < 1) throw ConfigError("model.n_head and model.n_key must be positive");
  if (channels % n_head != 0) throw ConfigError("model.channels must be divisible by model.n_head");
  if (n_layers < 1) throw ConfigError("model.n_layers must be positive");
  if (pose_dim < 1 || selection_hidden < 1 || ffn_hidden < 1) throw ConfigError("model widths must be positive");
  if (!(pose_scale > 0.0)) throw ConfigError("model.pose_scale must be positive");
  if (!(class_prior > 0.0 && class_prior < 1.0)) throw ConfigError("model.class_prior must lie in (0, 1)");
  if (!std::isfinite(selection_bias)) throw ConfigError("model.selection_bias must be finite");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"grid",
           {{"h_cells", grid.h_cells},
            {"w_cells", grid.w_cells},
            {"x_min", grid.x_min},
            {"x_max", grid.x_max},
            {"y_min", grid.y_min},
            {"y_max", grid.y_max},
            {"z_refs", grid.z_refs}}},
          {"channels", channels},
          {"raw_channels", raw_channels},
          {"feature_h", feature_h},
          {"feature_w", feature_w},
          {"n_head", n_head},
          {"n_key", n_key},
          {"n_layers", n_layers},
          {"pose_dim", pose_dim},
          {"selection_hidden", selection_hidden},
          {"ffn_hidden", ffn_hidden},
          {"pose_scale", pose_scale},
          {"class_prior", class_prior},
          {"selection_bias", selection_bias}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, ModelConfig c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "grid") {
      for (const auto& [gk, gv] : value.items()) {
        if (gk == "h_cells") c.grid.h_cells = gv.get<int>();
        else if (gk == "w_cells") c.grid.w_cells = gv.get<int>();
        else if (gk == "x_min") c.grid.x_min = gv.get<double>();
        else if (gk == "x_max") c.grid.x_max = gv.get<double>();
        else if (gk == "y_min") c.grid.y_min = gv.get<double>();
        else if (gk == "y_max") c.grid.y_max = gv.get<double>();
        else if (gk == "z_refs") c.grid.z_refs = gv.get<std::vector<double>>();
        else throw ConfigError("unknown model.grid key '" + gk + "'");
      }
    } else if (key == "channels") c.channels = value.get<int>();
    else if (key == "raw_channels") c.raw_channels = value.get<int>();
    else if (key == "feature_h") c.feature_h = value.get<int>();
    else if (key == "feature_w") c.feature_w = value.get<int>();
    else if (key == "n_head") c.n_head = value.get<int>();
    else if (key == "n_key") c.n_key = value.get<int>();
    else if (key == "n_layers") c.n_layers = value.get<int>();
    else if (key == "pose_dim") c.pose_dim = value.get<int>();
    else if (key == "selection_hidden") c.selection_hidden = value.get<int>();
    else if (key == "ffn_hidden") c.ffn_hidden = value.get<int>();
    else if (key == "pose_scale") c.pose_scale = value.get<double>();
    else if (key == "class_prior") c.class_prior = value.get<double>();
    else if (key == "selection_bias") c.selection_bias = value.get<double>();
    else throw ConfigError("unknown model key '" + key + "'");
  }
  return c;
}

void check_compatible(const nn::ParamStore& params, const ModelConfig& cfg) {
  const nn::ParamStore ref = init_model(cfg, 0);
  if (params.size() != ref.size()) {
    throw ConfigError(fmt::format("checkpoint holds {} tensors, the model needs {}", params.size(), ref.size()));
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& name = ref.name(i);
    if (!params.contains(name)) throw ConfigError("checkpoint lacks " + name);
    if (params.get(name).shape() != ref.tensor(i).shape()) {
      throw ConfigError(fmt::format("checkpoint tensor {} has shape {}, the model needs {}", name,
                                    nn::shape_str(params.get(name).shape()), nn::shape_str(ref.tensor(i).shape())));
    }
  }
}

std::string layer_prefix(int layer) { return "layer" + std::to_string(layer); }

namespace {

void add_norm(nn::ParamStore& store, const std::string& prefix, std::size_t c) {
  store.add(prefix + ".gamma", Tensor({c}, 1.0));
  store.add(prefix + ".beta", Tensor({c}, 0.0));
}

// Spread the initial sampling points on rings around the reference point so
// that keys start out distinct.
void ring_offsets(attention::DfmAttnParams& p, double radius) {
  const int total = p.n_head * p.n_key;
  for (int m = 0; m < p.n_head; ++m) {
    for (int n = 0; n < p.n_key; ++n) {
      const int k = m * p.n_key + n;
      const double angle = 2.0 * std::numbers::pi * k / total;
      const double r = radius * (1 + n % 2);
      p.offset_b[static_cast<std::size_t>(2 * k)] = r * std::cos(angle);
      p.offset_b[static_cast<std::size_t>(2 * k + 1)] = r * std::sin(angle);
    }
  }
}

}  // namespace

nn::ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto c = static_cast<std::size_t>(cfg.channels);
  const auto q = static_cast<std::size_t>(cfg.grid.n_cells());
  nn::ParamStore store;
  store.add_linear("stem", nn::LinearParams::uniform_init(static_cast<std::size_t>(cfg.raw_channels), c, rng));
  store.add("cam_embed", nn::uniform_tensor({static_cast<std::size_t>(cfg.feature_h),
                                             static_cast<std::size_t>(cfg.feature_w), c},
                                            1.0, rng));
  store.add("query_embed", nn::uniform_tensor({q, c}, 1.0, rng));
  store.add("pos_embed", nn::uniform_tensor({q, c}, 1.0, rng));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    auto self = attention::DfmAttnParams::init(cfg.channels, cfg.n_head, cfg.n_key, rng);
    ring_offsets(self, 0.5);
    self.store_into(store, pre + ".self");
    add_norm(store, pre + ".norm1", c);
    auto cross = attention::DfmAttnParams::init(cfg.channels, cfg.n_head, cfg.n_key, rng);
    ring_offsets(cross, 0.5);
    cross.store_into(store, pre + ".cross");
    add_norm(store, pre + ".norm2", c);
    store.add_linear(pre + ".ffn1", nn::LinearParams::uniform_init(c, static_cast<std::size_t>(cfg.ffn_hidden), rng));
    store.add_linear(pre + ".ffn2", nn::LinearParams::uniform_init(static_cast<std::size_t>(cfg.ffn_hidden), c, rng));
    add_norm(store, pre + ".norm3", c);
    auto sel = selection::SelectionParams::init(cfg.channels, cfg.pose_dim, cfg.selection_hidden, rng, cfg.pose_scale);
    sel.mlp2.bias[0] = cfg.selection_bias;
    sel.store_into(store, pre + ".select");
  }
  auto cls = nn::LinearParams::uniform_init(c, 1, rng);
  cls.bias[0] = std::log(cfg.class_prior / (1.0 - cfg.class_prior));
  store.add_linear("head.cls", std::move(cls));
  auto reg = nn::LinearParams::uniform_init(c, 5, rng);
  for (auto& w : reg.weight.span()) w *= 0.1;
  reg.bias[2] = std::log(4.4);
  reg.bias[3] = std::log(1.9);
  store.add_linear("head.reg", std::move(reg));
  return store;
}

ModelVars ModelVars::bind(const nn::BoundParams& p, const ModelConfig& cfg) {
  ModelVars v;
  v.stem_w = p["stem.weight"];
  v.stem_b = p["stem.bias"];
  v.cam_embed = p["cam_embed"];
  v.query = p["query_embed"];
  v.pos = p["pos_embed"];
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    LayerVars L;
    L.self = attention::AttnVars::bind(p, pre + ".self", cfg.n_head, cfg.n_key);
    L.cross = attention::AttnVars::bind(p, pre + ".cross", cfg.n_head, cfg.n_key);
    L.select = selection::SelectionVars::bind(p, pre + ".select", cfg.channels, cfg.pose_dim, cfg.pose_scale);
    L.norm1_g = p[pre + ".norm1.gamma"];
    L.norm1_b = p[pre + ".norm1.beta"];
    L.norm2_g = p[pre + ".norm2.gamma"];
    L.norm2_b = p[pre + ".norm2.beta"];
    L.norm3_g = p[pre + ".norm3.gamma"];
    L.norm3_b = p[pre + ".norm3.beta"];
    L.ffn1_w = p[pre + ".ffn1.weight"];
    L.ffn1_b = p[pre + ".ffn1.bias"];
    L.ffn2_w = p[pre + ".ffn2.weight"];
    L.ffn2_b = p[pre + ".ffn2.bias"];
    v.layers.push_back(L);
  }
  v.cls_w = p["head.cls.weight"];
  v.cls_b = p["head.cls.bias"];
  v.reg_w = p["head.reg.weight"];
  v.reg_b = p["head.reg.bias"];
  return v;
}

Encoded encode_bev(nn::Tape& tape, const ModelVars& vars, const ModelConfig& cfg, const ModelInput& input,
                   const EncodeOptions& options) {
  const auto& grid = cfg.grid;
  const auto n_q = static_cast<std::size_t>(grid.n_cells());
  const auto c = static_cast<std::size_t>(cfg.channels);
  const auto hk = static_cast<std::size_t>(cfg.n_head * cfg.n_key);
  if (options.mode == GateMode::Hard && !(options.epsilon >= 0.0 && options.epsilon < 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1)");
  }
  if (vars.query.value().numel() != n_q * c) throw std::invalid_argument("query embedding does not match the grid");

  const attention::HitTable table(grid, input.rigs, input.poses);
  const auto& cams = table.cameras();
  const std::size_t n_g = cams.size();

  // Camera sources: locally evaluated cameras get a feature map; partner
  // cameras served by the remote hook do not.
  std::vector<char> is_remote(n_g, 0);
  std::vector<Var> features(n_g);
  std::vector<std::pair<int, int>> dims(n_g, {1, 1});
  for (std::size_t g = 0; g < n_g; ++g) {
    if (options.remote && cams[g].key.car_id != input.ego_id) {
      is_remote[g] = 1;
      continue;
    }
    const auto it = input.raw.find(cams[g].key);
    if (it == input.raw.end()) {
      throw std::invalid_argument("missing feature map for car " + std::to_string(cams[g].key.car_id) + " camera " +
                                  std::to_string(cams[g].key.cam_id));
    }
    const Tensor& raw = it->second;
    if (raw.shape() != nn::Shape{static_cast<std::size_t>(cfg.feature_h), static_cast<std::size_t>(cfg.feature_w),
                                 static_cast<std::size_t>(cfg.raw_channels)}) {
      throw std::invalid_argument("raw channels have shape " + nn::shape_str(raw.shape()));
    }
    features[g] = nn::add(nn::linear(tape.constant(raw), vars.stem_w, vars.stem_b), vars.cam_embed);
    dims[g] = {static_cast<int>(raw.dim(0)), static_cast<int>(raw.dim(1))};
  }
  std::vector<geometry::HomTransform> chains;
  std::vector<geometry::CameraKey> keys;
  for (const auto& cam : cams) {
    chains.push_back(cam.ego_from_cam);
    keys.push_back(cam.key);
  }

  // Per (query, hit) normalization 1 / |hits of that car| from the dense
  // geometric hit set.
  Tensor hit_mask({n_q, std::max<std::size_t>(n_g, 1)}, 0.0);
  std::vector<double> hit_scale;
  for (std::size_t qi = 0; qi < n_q; ++qi) {
    std::map<int, int> per_car;
    for (const auto& h : table.hits(qi)) {
      ++per_car[cams[h.camera].key.car_id];
      hit_mask[qi * hit_mask.cols() + h.camera] = 1.0;
    }
    for (const auto& h : table.hits(qi)) hit_scale.push_back(1.0 / per_car[cams[h.camera].key.car_id]);
  }

  SamplePlan self_plan;
  for (std::size_t qi = 0; qi < n_q; ++qi) {
    const auto cell = grid.cell(static_cast<int>(qi));
    self_plan.entries.push_back({static_cast<std::uint32_t>(qi), 0, -1, 1.0, static_cast<std::uint32_t>(qi), 1});
    self_plan.refs.push_back({static_cast<double>(cell.x_idx), static_cast<double>(cell.y_idx)});
  }

  Encoded enc;
  Var q = vars.query;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerVars& L = vars.layers[static_cast<std::size_t>(l)];

    {
      const Var qp = nn::add(q, vars.pos);
      const auto pr = attention::predict(qp, L.self);
      const Var v = nn::linear(q, L.self.value_w);
      const Var agg = attention::deform_gather({{v, grid.h_cells, grid.w_cells}}, pr.offsets, pr.weights, Var{},
                                               self_plan, cfg.n_head, cfg.n_key, n_q);
      q = nn::layer_norm(nn::add(q, nn::linear(agg, L.self.output_w)), L.norm1_g, L.norm1_b);
    }

    LayerStats stats;
    stats.cameras = keys;
    stats.hit_mask = hit_mask;
    {
      const Var qp = nn::add(q, vars.pos);
      const auto pr = attention::predict(qp, L.cross);
      Var scores;
      if (options.mode != GateMode::ForceOne && n_g > 0) scores = selection::interest_scores(qp, chains, L.select);
      stats.scores = scores;

      SamplePlan plan;
      std::vector<std::size_t> remote_entries;
      std::size_t hit_idx = 0;
      for (std::size_t qi = 0; qi < n_q; ++qi) {
        for (const auto& h : table.hits(qi)) {
          const double scale = hit_scale[hit_idx++];
          ++stats.counters.dense_pairs;
          int gate_col = -1;
          if (options.mode != GateMode::ForceOne) {
            gate_col = static_cast<int>(h.camera);
            if (options.mode == GateMode::Hard && !(scores.value()[qi * n_g + h.camera] > options.epsilon)) continue;
          }
          ++stats.counters.active_pairs;
          const auto refs = table.refs(h);
          SampleEntry e{static_cast<std::uint32_t>(qi), h.camera, gate_col, scale,
                        static_cast<std::uint32_t>(plan.refs.size()), static_cast<std::uint32_t>(refs.size())};
          plan.refs.insert(plan.refs.end(), refs.begin(), refs.end());
          if (is_remote[h.camera]) remote_entries.push_back(plan.entries.size());
          plan.entries.push_back(e);
        }
      }

      if (options.remote) {
        plan.external.assign(plan.entries.size(), 0);
        plan.external_values.assign(plan.entries.size() * c, 0.0);
        std::vector<RemoteRequest> requests;
        requests.reserve(remote_entries.size());
        const Tensor& off = pr.offsets.value();
        const Tensor& wts = pr.weights.value();
        for (std::size_t e : remote_entries) {
          const SampleEntry& en = plan.entries[e];
          RemoteRequest r;
          r.query = en.query;
          r.key = cams[en.source].key;
          const auto refs = plan.entry_refs(en);
          r.refs.assign(refs.begin(), refs.end());
          r.offsets.assign(off.data() + en.query * hk * 2, off.data() + (en.query + 1) * hk * 2);
          r.weights.assign(wts.data() + en.query * hk, wts.data() + (en.query + 1) * hk);
          requests.push_back(std::move(r));
        }
        const auto answers = requests.empty() ? std::vector<std::vector<double>>{}
                                              : options.remote->fetch(l, requests);
        if (answers.size() != requests.size()) throw std::runtime_error("remote hook returned the wrong answer count");
        for (std::size_t i = 0; i < remote_entries.size(); ++i) {
          if (answers[i].size() != c) throw std::runtime_error("remote hook returned a wrong-width answer");
          plan.external[remote_entries[i]] = 1;
          std::copy(answers[i].begin(), answers[i].end(), plan.external_values.begin() + remote_entries[i] * c);
        }
      }

      // Source index = camera index; remote cameras get a zero placeholder
      // that is never sampled.
      std::vector<ValueSource> sources;
      Var placeholder;
      for (std::size_t g = 0; g < n_g; ++g) {
        if (is_remote[g]) {
          if (!placeholder.valid()) placeholder = tape.constant(Tensor({1, c}, 0.0));
          sources.push_back({placeholder, 1, 1});
        } else {
          sources.push_back({nn::linear(features[g], L.cross.value_w), dims[g].first, dims[g].second});
        }
      }
      Var cross;
      if (plan.entries.empty()) {
        cross = tape.constant(Tensor({n_q, c}, 0.0));
      } else {
        const Var agg = attention::deform_gather(sources, pr.offsets, pr.weights, scores, plan, cfg.n_head,
                                                 cfg.n_key, n_q);
        cross = nn::linear(agg, L.cross.output_w);
      }
      q = nn::layer_norm(nn::add(q, cross), L.norm2_g, L.norm2_b);
    }
    enc.totals.dense_pairs += stats.counters.dense_pairs;
    enc.totals.active_pairs += stats.counters.active_pairs;
    enc.layers.push_back(std::move(stats));

    const Var hidden = nn::relu(nn::linear(q, L.ffn1_w, L.ffn1_b));
    q = nn::layer_norm(nn::add(q, nn::linear(hidden, L.ffn2_w, L.ffn2_b)), L.norm3_g, L.norm3_b);
  }
  enc.bev = q;
  return enc;
}

EncodedBev encode_bev(const nn::ParamStore& params, const ModelConfig& cfg, const ModelInput& input,
                      const EncodeOptions& options) {
  nn::Tape tape;
  const nn::BoundParams bound(tape, params, false);
  const ModelVars vars = ModelVars::bind(bound, cfg);
  const Encoded enc = encode_bev(tape, vars, cfg, input, options);
  EncodedBev out;
  out.bev = enc.bev.value();
  for (const auto& l : enc.layers) {
    out.cameras.push_back(l.cameras);
    out.scores.push_back(l.scores.valid() ? l.scores.value() : Tensor());
    out.hit_masks.push_back(l.hit_mask);
    out.counters.push_back(l.counters);
  }
  out.totals = enc.totals;
  return out;
}

namespace {

void layer_norm_rows(Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* row = x.data() + r * c;
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += row[k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) row[k] = (row[k] - mu) * inv * gamma[k] + beta[k];
  }
}

std::vector<double> affine(const nn::LinearParams& p, const double* x) {
  std::vector<double> y(p.out_features());
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = p.bias[r];
    for (std::size_t k = 0; k < p.in_features(); ++k) s += p.weight.at(r, k) * x[k];
    y[r] = s;
  }
  return y;
}

}  // namespace

Tensor encode_bev_dense(const nn::ParamStore& params, const ModelConfig& cfg, const ModelInput& input) {
  const auto& grid = cfg.grid;
  const auto h = static_cast<std::size_t>(grid.h_cells);
  const auto w = static_cast<std::size_t>(grid.w_cells);
  const auto c = static_cast<std::size_t>(cfg.channels);
  const auto stem = params.linear("stem");
  const Tensor& cam_embed = params.get("cam_embed");
  attention::FeatureSet features;
  for (const auto& rig : input.rigs) {
    const auto it = input.raw.find(rig.key());
    if (it == input.raw.end()) throw std::invalid_argument("missing feature map for a dense-route camera");
    const Tensor& raw = it->second;
    if (raw.numel() != cam_embed.numel() / c * raw.dim(2)) throw std::invalid_argument("raw channels do not match cam_embed");
    Tensor f({raw.dim(0), raw.dim(1), c});
    for (std::size_t p = 0; p < raw.dim(0) * raw.dim(1); ++p) {
      const auto y = affine(stem, raw.data() + p * raw.dim(2));
      for (std::size_t k = 0; k < c; ++k) f[p * c + k] = y[k] + cam_embed[p * c + k];
    }
    features[rig.key()] = std::move(f);
  }
  std::map<int, std::vector<geometry::CameraRig>> by_car;
  for (const auto& rig : input.rigs) by_car[rig.car_id].push_back(rig);

  attention::BevQueries bq{params.get("query_embed").reshaped({h, w, c}), params.get("pos_embed").reshaped({h, w, c})};
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    const auto self = attention::DfmAttnParams::load_from(params, pre + ".self", cfg.n_head, cfg.n_key);
    const auto cross = attention::DfmAttnParams::load_from(params, pre + ".cross", cfg.n_head, cfg.n_key);
    bq = attention::bev_self_attn(bq, self);
    layer_norm_rows(bq.grid, params.get(pre + ".norm1.gamma"), params.get(pre + ".norm1.beta"));

    Tensor next = bq.grid;
    for (int y = 0; y < grid.h_cells; ++y) {
      for (int x = 0; x < grid.w_cells; ++x) {
        const auto qwp = bq.query_with_pos({x, y});
        double* dst = next.data() + (static_cast<std::size_t>(y) * w + x) * c;
        for (const auto& [car, rigs] : by_car) {
          const auto s = attention::spatial_cross_attn(qwp, {x, y}, grid, features, rigs, input.poses, cross);
          for (std::size_t k = 0; k < c; ++k) dst[k] += s[k];
        }
      }
    }
    layer_norm_rows(next, params.get(pre + ".norm2.gamma"), params.get(pre + ".norm2.beta"));

    const auto ffn1 = params.linear(pre + ".ffn1");
    const auto ffn2 = params.linear(pre + ".ffn2");
    for (std::size_t p = 0; p < h * w; ++p) {
      double* row = next.data() + p * c;
      auto hid = affine(ffn1, row);
      for (auto& v : hid) v = std::max(v, 0.0);
      const auto f = affine(ffn2, hid.data());
      for (std::size_t k = 0; k < c; ++k) row[k] += f[k];
    }
    layer_norm_rows(next, params.get(pre + ".norm3.gamma"), params.get(pre + ".norm3.beta"));
    bq.grid = std::move(next);
  }
  return bq.grid.reshaped({h * w, c});
}

DetHeadParams DetHeadParams::load_from(const nn::ParamStore& store) {
  return {store.linear("head.cls"), store.linear("head.reg")};
}

HeadOutput head(const Var& bev, const ModelVars& vars) {
  return {nn::linear(bev, vars.cls_w, vars.cls_b), nn::linear(bev, vars.reg_w, vars.reg_b)};
}

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

constexpr double kLogSizeClamp = 5.0;

}  // namespace

DetectionBox decode_cell(const geometry::BevGrid& grid, int flat_cell, double logit, std::span<const double> reg) {
  const auto center = grid.cell_center(grid.cell(flat_cell));
  DetectionBox b;
  b.cx = center.x() + 0.5 * grid.cell_size_x() * std::tanh(reg[0]);
  b.cy = center.y() + 0.5 * grid.cell_size_y() * std::tanh(reg[1]);
  b.length = std::exp(std::clamp(reg[2], -kLogSizeClamp, kLogSizeClamp));
  b.width = std::exp(std::clamp(reg[3], -kLogSizeClamp, kLogSizeClamp));
  b.yaw = reg[4];
  b.score = sigmoid(logit);
  return b;
}

std::vector<DetectionBox> decode(const Tensor& logits, const Tensor& reg, const geometry::BevGrid& grid,
                                 double score_floor, double nms_iou) {
  const auto n = static_cast<std::size_t>(grid.n_cells());
  if (logits.numel() != n || reg.numel() != n * 5) throw std::invalid_argument("head outputs do not match the grid");
  std::vector<DetectionBox> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmoid(logits[i]) > score_floor)) continue;
    boxes.push_back(decode_cell(grid, static_cast<int>(i), logits[i], {reg.data() + i * 5, 5}));
  }
  return nms(std::move(boxes), nms_iou);
}

std::vector<DetectionBox> detect(const Tensor& bev, const DetHeadParams& params, const geometry::BevGrid& grid,
                                 double score_floor, double nms_iou) {
  const auto n = static_cast<std::size_t>(grid.n_cells());
  const std::size_t c = params.cls.in_features();
  if (bev.numel() != n * c) throw std::invalid_argument("encoded BEV does not match the head width");
  Tensor logits({n, 1});
  Tensor reg({n, 5});
  for (std::size_t i = 0; i < n; ++i) {
    logits[i] = affine(params.cls, bev.data() + i * c)[0];
    const auto r = affine(params.reg, bev.data() + i * c);
    std::copy(r.begin(), r.end(), reg.data() + i * 5);
  }
  return decode(logits, reg, grid, score_floor, nms_iou);
}

nlohmann::json LossConfig::to_json() const {
  return {{"center_cost", center_cost}, {"class_cost", class_cost}, {"reg_weight", reg_weight}, {"bg_weight", bg_weight}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j, LossConfig c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "center_cost") c.center_cost = value.get<double>();
    else if (key == "class_cost") c.class_cost = value.get<double>();
    else if (key == "reg_weight") c.reg_weight = value.get<double>();
    else if (key == "bg_weight") c.bg_weight = value.get<double>();
    else throw ConfigError("unknown loss key '" + key + "'");
  }
  return c;
}

double wrap_half_turn(double d) { return d - std::numbers::pi * std::floor((d + 0.5 * std::numbers::pi) / std::numbers::pi); }

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct RegTarget {
  std::size_t cell = 0;
  double gx = 0.0, gy = 0.0, log_l = 0.0, log_w = 0.0, yaw = 0.0;
  double cx0 = 0.0, cy0 = 0.0;  // cell center
};

}  // namespace

LossResult match_and_loss(const HeadOutput& out, const std::vector<DetectionBox>& gts, const geometry::BevGrid& grid,
                          const LossConfig& cfg) {
  const auto n = static_cast<std::size_t>(grid.n_cells());
  const Tensor& logits = out.logits.value();
  const Tensor& reg = out.reg.value();
  if (logits.numel() != n || reg.numel() != n * 5) throw std::invalid_argument("head outputs do not match the grid");
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericalError("non-finite class logit");
  }
  for (const auto& g : gts) g.validate();

  LossResult res;
  std::vector<RegTarget> targets;
  if (!gts.empty()) {
    std::vector<std::vector<double>> cost(gts.size(), std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const DetectionBox b = decode_cell(grid, static_cast<int>(i), logits[i], {reg.data() + i * 5, 5});
      for (std::size_t g = 0; g < gts.size(); ++g) {
        cost[g][i] = cfg.center_cost * (std::abs(b.cx - gts[g].cx) + std::abs(b.cy - gts[g].cy)) +
                     cfg.class_cost * (1.0 - b.score);
      }
    }
    const Assignment a = solve_assignment(cost);
    res.gt_to_cell = a.row_to_col;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto cell = static_cast<std::size_t>(a.row_to_col[g]);
      const auto center = grid.cell_center(grid.cell(static_cast<int>(cell)));
      targets.push_back({cell, gts[g].cx, gts[g].cy, std::log(gts[g].length), std::log(gts[g].width), gts[g].yaw,
                         center.x(), center.y()});
    }
  }

  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(gts.size()));
  Tensor cls_target({n}, 0.0);
  Tensor cls_weight({n}, cfg.bg_weight * norm);
  for (const auto& t : targets) {
    cls_target[t.cell] = 1.0;
    cls_weight[t.cell] = norm;
  }
  const Var cls = nn::bce_with_logits(out.logits, cls_target, cls_weight);
  res.class_loss = cls.value()[0];
  if (targets.empty()) {
    res.loss = cls;
    return res;
  }

  const double sx = grid.cell_size_x();
  const double sy = grid.cell_size_y();
  const double wreg = cfg.reg_weight * norm;
  // Center errors in cell units; sizes in log space; yaw modulo a half turn.
  double total = 0.0;
  Tensor d(reg.shape(), 0.0);
  for (const auto& t : targets) {
    const double* r = reg.data() + t.cell * 5;
    double* dr = d.data() + t.cell * 5;
    const double tx = std::tanh(r[0]);
    const double ty = std::tanh(r[1]);
    const double ex = (t.cx0 + 0.5 * sx * tx - t.gx) / sx;
    const double ey = (t.cy0 + 0.5 * sy * ty - t.gy) / sy;
    const double el = r[2] - t.log_l;
    const double ew = r[3] - t.log_w;
    const double eyaw = wrap_half_turn(r[4] - t.yaw);
    total += std::abs(ex) + std::abs(ey) + std::abs(el) + std::abs(ew) + std::abs(eyaw);
    dr[0] += wreg * sign(ex) * 0.5 * (1.0 - tx * tx);
    dr[1] += wreg * sign(ey) * 0.5 * (1.0 - ty * ty);
    dr[2] += wreg * sign(el);
    dr[3] += wreg * sign(ew);
    dr[4] += wreg * sign(eyaw);
  }
  res.reg_loss = wreg * total;
  nn::Tape& tape = *out.reg.tape();
  const Var regl = tape.record(Tensor::scalar(res.reg_loss), {out.reg},
                               [rid = out.reg.id(), d = std::move(d)](nn::Tape& t, std::size_t self) {
                                 if (Tensor* g = t.grad_target(rid)) {
                                   const double s = t.grad_of(self)[0];
                                   for (std::size_t i = 0; i < d.numel(); ++i) (*g)[i] += s * d[i];
                                 }
                               });
  res.loss = nn::add(cls, regl);
  return res;
}

}  // namespace actbev::perception
