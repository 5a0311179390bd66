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

#include "actbev/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "actbev/ops.hpp"

namespace actbev::attention {

using nn::Tape;

namespace {

void require_shape(const Tensor& t, const nn::Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw std::invalid_argument(std::string(what) + " has shape " + nn::shape_str(t.shape()) + ", expected " +
                                nn::shape_str(shape));
  }
}

/// y = W x (+ b) for W [rows, cols] stored row-major.
Vec matvec(const Tensor& w, std::span<const double> x, const Tensor* b = nullptr) {
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.dim(1);
  if (x.size() != cols) throw std::invalid_argument("matvec: input length mismatch");
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b ? (*b)[r] : 0.0;
    const double* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vec cell_vector(const Tensor& grid, geometry::BevCell c) {
  const std::size_t ch = grid.dim(2);
  const std::size_t off = (static_cast<std::size_t>(c.y_idx) * grid.dim(1) + c.x_idx) * ch;
  return Vec(grid.data() + off, grid.data() + off + ch);
}

void axpy(double a, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

void DfmAttnParams::validate() const {
  if (n_head < 1 || n_key < 1) throw std::invalid_argument("n_head and n_key must be positive");
  if (value_w.rank() != 2 || value_w.dim(0) != value_w.dim(1)) {
    throw std::invalid_argument("value projection must be square [C, C]");
  }
  const std::size_t c = value_w.dim(0);
  if (c % static_cast<std::size_t>(n_head) != 0) throw std::invalid_argument("C must be divisible by n_head");
  const std::size_t hk = static_cast<std::size_t>(n_head * n_key);
  require_shape(output_w, {c, c}, "output projection");
  require_shape(offset_w, {hk * 2, c}, "offset predictor weight");
  require_shape(offset_b, {hk * 2}, "offset predictor bias");
  require_shape(weight_w, {hk, c}, "attention weight predictor");
  require_shape(weight_b, {hk}, "attention weight bias");
}

DfmAttnParams DfmAttnParams::init(int channels, int n_head, int n_key, Rng& rng) {
  if (channels < 1 || n_head < 1 || n_key < 1 || channels % n_head != 0) {
    throw std::invalid_argument("invalid attention dimensions");
  }
  const auto c = static_cast<std::size_t>(channels);
  const auto hk = static_cast<std::size_t>(n_head * n_key);
  const double bound = std::sqrt(1.0 / channels);
  DfmAttnParams p;
  p.n_head = n_head;
  p.n_key = n_key;
  p.value_w = nn::uniform_tensor({c, c}, bound, rng);
  p.output_w = nn::uniform_tensor({c, c}, bound, rng);
  p.offset_w = Tensor({hk * 2, c});
  p.offset_b = Tensor({hk * 2});
  p.weight_w = nn::uniform_tensor({hk, c}, bound, rng);
  p.weight_b = Tensor({hk});
  return p;
}

void DfmAttnParams::store_into(nn::ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".value_w", value_w);
  store.add(prefix + ".output_w", output_w);
  store.add(prefix + ".offset_w", offset_w);
  store.add(prefix + ".offset_b", offset_b);
  store.add(prefix + ".weight_w", weight_w);
  store.add(prefix + ".weight_b", weight_b);
}

DfmAttnParams DfmAttnParams::load_from(const nn::ParamStore& store, const std::string& prefix, int n_head,
                                       int n_key) {
  DfmAttnParams p;
  p.n_head = n_head;
  p.n_key = n_key;
  p.value_w = store.get(prefix + ".value_w");
  p.output_w = store.get(prefix + ".output_w");
  p.offset_w = store.get(prefix + ".offset_w");
  p.offset_b = store.get(prefix + ".offset_b");
  p.weight_w = store.get(prefix + ".weight_w");
  p.weight_b = store.get(prefix + ".weight_b");
  p.validate();
  return p;
}

std::vector<double> BevQueries::query_with_pos(geometry::BevCell c) const {
  Vec q = cell_vector(grid, c);
  const Vec p = cell_vector(pos, c);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] += p[i];
  return q;
}

QueryPrediction predict(std::span<const double> q, const DfmAttnParams& params) {
  QueryPrediction out;
  out.offsets = matvec(params.offset_w, q, &params.offset_b);
  out.weights = matvec(params.weight_w, q, &params.weight_b);
  const auto nk = static_cast<std::size_t>(params.n_key);
  for (std::size_t m = 0; m < static_cast<std::size_t>(params.n_head); ++m) {
    double* w = out.weights.data() + m * nk;
    const double mx = *std::max_element(w, w + nk);
    double total = 0.0;
    for (std::size_t n = 0; n < nk; ++n) {
      w[n] = std::exp(w[n] - mx);
      total += w[n];
    }
    for (std::size_t n = 0; n < nk; ++n) w[n] /= total;
  }
  return out;
}

Tensor value_map(const Tensor& features, const DfmAttnParams& params) {
  if (features.rank() != 3 || features.dim(2) != params.value_w.dim(1)) {
    throw std::invalid_argument("feature map " + nn::shape_str(features.shape()) +
                                " does not match the attention channel width");
  }
  const std::size_t c = features.dim(2);
  const std::size_t pixels = features.dim(0) * features.dim(1);
  Tensor out(features.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const Vec v = matvec(params.value_w, {features.data() + p * c, c});
    std::copy(v.begin(), v.end(), out.data() + p * c);
  }
  return out;
}

void gather_entry(const Tensor& value, int n_head, int n_key, std::span<const double> offsets,
                  std::span<const double> weights, std::span<const RefPoint> refs, std::span<double> out) {
  const int h = static_cast<int>(value.dim(0));
  const int w = static_cast<int>(value.dim(1));
  const int c = static_cast<int>(value.dim(2));
  const int dh = c / n_head;
  for (const auto& r : refs) {
    for (int m = 0; m < n_head; ++m) {
      for (int n = 0; n < n_key; ++n) {
        const std::size_t k = static_cast<std::size_t>(m * n_key + n);
        nn::detail::bilinear_accumulate(value.data(), h, w, c, m * dh, dh, r.u + offsets[2 * k],
                                        r.v + offsets[2 * k + 1], weights[k], out.data() + m * dh);
      }
    }
  }
}

Vec dfm_attn(std::span<const double> q, RefPoint p, const Tensor& features, const DfmAttnParams& params) {
  params.validate();
  if (q.size() != static_cast<std::size_t>(params.channels())) {
    throw std::invalid_argument("query length does not match the attention channel width");
  }
  const QueryPrediction pred = predict(q, params);
  const Tensor v = value_map(features, params);
  Vec agg(static_cast<std::size_t>(params.channels()), 0.0);
  const RefPoint refs[1] = {p};
  gather_entry(v, params.n_head, params.n_key, pred.offsets, pred.weights, refs, agg);
  return matvec(params.output_w, agg);
}

Vec per_camera_attn(std::span<const double> q, geometry::BevCell cell, int ref_j, const geometry::BevGrid& grid,
                    const geometry::CameraRig& rig, const geometry::AgentPoses& poses, const Tensor& features,
                    const DfmAttnParams& params) {
  const auto pillar = geometry::reference_pillar(grid, cell.x_idx, cell.y_idx);
  if (ref_j < 0 || ref_j >= static_cast<int>(pillar.size())) throw std::out_of_range("reference index out of range");
  const auto cam_from_ego = geometry::invert(geometry::ego_from_camera(rig, poses));
  const auto p = geometry::project_point(cam_from_ego, rig.intrinsics, pillar[static_cast<std::size_t>(ref_j)]);
  if (!p) return Vec(static_cast<std::size_t>(params.channels()), 0.0);
  return dfm_attn(q, {p->u, p->v}, features, params);
}

namespace {

const Tensor& features_for(const FeatureSet& features, geometry::CameraKey key) {
  const auto it = features.find(key);
  if (it == features.end()) {
    throw std::invalid_argument("missing feature map for car " + std::to_string(key.car_id) + " camera " +
                                std::to_string(key.cam_id));
  }
  return it->second;
}

/// sum_j Attn(q, P_k(q, i, j), F_ki) for one camera.
Vec pillar_sum(std::span<const double> q, geometry::BevCell cell, const geometry::BevGrid& grid,
               const geometry::CameraRig& rig, const geometry::AgentPoses& poses, const Tensor& f,
               const DfmAttnParams& params) {
  Vec acc(static_cast<std::size_t>(params.channels()), 0.0);
  for (int j = 0; j < grid.n_ref(); ++j) axpy(1.0, per_camera_attn(q, cell, j, grid, rig, poses, f, params), acc);
  return acc;
}

}  // namespace

Vec spatial_cross_attn(std::span<const double> q, geometry::BevCell cell, const geometry::BevGrid& grid,
                       const FeatureSet& features, const std::vector<geometry::CameraRig>& rigs,
                       const geometry::AgentPoses& poses, const DfmAttnParams& params) {
  Vec out(static_cast<std::size_t>(params.channels()), 0.0);
  const auto hits = geometry::hit_set(cell, rigs, poses, grid);
  if (hits.empty()) return out;
  for (const auto& rig : rigs) {
    if (!hits.count(rig.key())) continue;
    axpy(1.0, pillar_sum(q, cell, grid, rig, poses, features_for(features, rig.key()), params), out);
  }
  const double inv = 1.0 / static_cast<double>(hits.size());
  for (auto& v : out) v *= inv;
  return out;
}

Vec psa(std::span<const double> q, geometry::BevCell cell, const geometry::BevGrid& grid, const FeatureSet& features,
        const InterestLookup& interest, const std::vector<geometry::CameraRig>& rigs,
        const geometry::AgentPoses& poses, const DfmAttnParams& params, GateMode mode, double epsilon,
        GateCounters* counters) {
  Vec out(static_cast<std::size_t>(params.channels()), 0.0);
  std::map<int, std::vector<geometry::CameraRig>> by_car;
  for (const auto& rig : rigs) by_car[rig.car_id].push_back(rig);
  for (const auto& [car, car_rigs] : by_car) {
    const auto hits = geometry::hit_set(cell, car_rigs, poses, grid);
    if (hits.empty()) continue;
    Vec car_sum(out.size(), 0.0);
    for (const auto& rig : car_rigs) {
      if (!hits.count(rig.key())) continue;
      double gate = 1.0;
      if (mode != GateMode::ForceOne) {
        const auto it = interest.find(rig.key());
        if (it == interest.end()) {
          throw std::invalid_argument("missing interest score for car " + std::to_string(rig.car_id) + " camera " +
                                      std::to_string(rig.cam_id));
        }
        gate = it->second;
      }
      if (counters) ++counters->dense_pairs;
      if (mode == GateMode::Hard && !(gate > epsilon)) continue;
      if (counters) ++counters->active_pairs;
      axpy(gate, pillar_sum(q, cell, grid, rig, poses, features_for(features, rig.key()), params), car_sum);
    }
    axpy(1.0 / static_cast<double>(hits.size()), car_sum, out);
  }
  return out;
}

BevQueries bev_self_attn(const BevQueries& queries, const DfmAttnParams& params) {
  params.validate();
  const Tensor v = value_map(queries.grid, params);
  BevQueries out = queries;
  const auto c = static_cast<std::size_t>(queries.channels());
  for (int y = 0; y < queries.h(); ++y) {
    for (int x = 0; x < queries.w(); ++x) {
      const Vec qp = queries.query_with_pos({x, y});
      const QueryPrediction pred = predict(qp, params);
      Vec agg(c, 0.0);
      const RefPoint refs[1] = {{static_cast<double>(x), static_cast<double>(y)}};
      gather_entry(v, params.n_head, params.n_key, pred.offsets, pred.weights, refs, agg);
      const Vec o = matvec(params.output_w, agg);
      double* dst = out.grid.data() + (static_cast<std::size_t>(y) * queries.w() + x) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += o[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

HitTable::HitTable(const geometry::BevGrid& grid, const std::vector<geometry::CameraRig>& rigs,
                   const geometry::AgentPoses& poses) {
  grid.validate();
  std::vector<geometry::HomTransform> cam_from_ego;
  for (const auto& rig : rigs) {
    rig.intrinsics.validate();
    const auto chain = geometry::ego_from_camera(rig, poses);
    cameras_.push_back({rig.key(), chain, rig.intrinsics});
    cam_from_ego.push_back(geometry::invert(chain));
  }
  const int n = grid.n_cells();
  query_begin_.reserve(static_cast<std::size_t>(n) + 1);
  query_begin_.push_back(0);
  for (int qi = 0; qi < n; ++qi) {
    const auto cell = grid.cell(qi);
    const auto pillar = geometry::reference_pillar(grid, cell.x_idx, cell.y_idx);
    for (std::size_t c = 0; c < cameras_.size(); ++c) {
      const auto begin = static_cast<std::uint32_t>(refs_.size());
      for (const auto& p : pillar) {
        if (auto px = geometry::project_point(cam_from_ego[c], cameras_[c].intrinsics, p)) {
          refs_.push_back({px->u, px->v});
        }
      }
      const auto count = static_cast<std::uint32_t>(refs_.size()) - begin;
      if (count > 0) hits_.push_back({static_cast<std::uint32_t>(c), begin, count});
    }
    query_begin_.push_back(hits_.size());
  }
}

std::optional<std::size_t> HitTable::camera_index(geometry::CameraKey key) const {
  for (std::size_t i = 0; i < cameras_.size(); ++i) {
    if (cameras_[i].key == key) return i;
  }
  return std::nullopt;
}

Var deform_gather(const std::vector<ValueSource>& sources, const Var& offsets, const Var& weights, const Var& gates,
                  const SamplePlan& plan, int n_head, int n_key, std::size_t n_queries) {
  if (sources.empty() && !plan.entries.empty()) throw std::invalid_argument("deform_gather: no value sources");
  if (!offsets.valid() || !weights.valid()) throw std::invalid_argument("deform_gather: unbound predictions");
  const std::size_t c = sources.empty() ? 0 : sources.front().map.value().cols();
  const std::size_t hk = static_cast<std::size_t>(n_head * n_key);
  if (c == 0 || c % static_cast<std::size_t>(n_head) != 0) throw std::invalid_argument("deform_gather: bad channel width");
  for (const auto& s : sources) {
    if (s.map.value().cols() != c || s.map.value().numel() != static_cast<std::size_t>(s.h * s.w) * c) {
      throw std::invalid_argument("deform_gather: value map shape mismatch");
    }
  }
  if (offsets.value().numel() != n_queries * hk * 2 || weights.value().numel() != n_queries * hk) {
    throw std::invalid_argument("deform_gather: prediction shape mismatch");
  }
  const bool has_gates = gates.valid();
  const std::size_t g_cols = has_gates ? gates.value().cols() : 0;
  const bool has_external = !plan.external.empty();
  if (has_external && (plan.external.size() != plan.entries.size() ||
                       plan.external_values.size() != plan.entries.size() * c)) {
    throw std::invalid_argument("deform_gather: external contribution table size mismatch");
  }

  const int dh = static_cast<int>(c) / n_head;
  const Tensor& off = offsets.value();
  const Tensor& wts = weights.value();
  Tensor out({n_queries, c});
  std::vector<double> contrib(c);
  for (std::size_t e = 0; e < plan.entries.size(); ++e) {
    const SampleEntry& en = plan.entries[e];
    if (en.query >= n_queries) throw std::out_of_range("deform_gather: entry query out of range");
    double gate = 1.0;
    if (has_gates && en.gate_col >= 0) gate = gates.value()[en.query * g_cols + static_cast<std::size_t>(en.gate_col)];
    const double coef = en.scale * gate;
    double* dst = out.data() + static_cast<std::size_t>(en.query) * c;
    if (has_external && plan.external[e]) {
      const double* ext = plan.external_values.data() + e * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += coef * ext[k];
      continue;
    }
    const ValueSource& src = sources.at(en.source);
    const double* vmap = src.map.value().data();
    std::fill(contrib.begin(), contrib.end(), 0.0);
    const double* qo = off.data() + static_cast<std::size_t>(en.query) * hk * 2;
    const double* qw = wts.data() + static_cast<std::size_t>(en.query) * hk;
    for (const auto& r : plan.entry_refs(en)) {
      for (int m = 0; m < n_head; ++m) {
        for (int n = 0; n < n_key; ++n) {
          const std::size_t k = static_cast<std::size_t>(m * n_key + n);
          nn::detail::bilinear_accumulate(vmap, src.h, src.w, static_cast<int>(c), m * dh, dh, r.u + qo[2 * k],
                                          r.v + qo[2 * k + 1], qw[k], contrib.data() + m * dh);
        }
      }
    }
    for (std::size_t k = 0; k < c; ++k) dst[k] += coef * contrib[k];
  }

  std::vector<Var> parents{offsets, weights};
  if (has_gates) parents.push_back(gates);
  std::vector<std::size_t> source_ids;
  std::vector<std::pair<int, int>> source_dims;
  for (const auto& s : sources) {
    parents.push_back(s.map);
    source_ids.push_back(s.map.id());
    source_dims.emplace_back(s.h, s.w);
  }
  auto shared_plan = std::make_shared<const SamplePlan>(plan);
  Tape& tape = *offsets.tape();
  return tape.record(
      std::move(out), parents,
      [plan = std::move(shared_plan), source_ids = std::move(source_ids), source_dims = std::move(source_dims),
       oid = offsets.id(), wid = weights.id(), gid = has_gates ? gates.id() : 0, has_gates, g_cols, c, hk, n_head,
       n_key, dh, has_external](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& off2 = t.value(oid);
        const Tensor& wts2 = t.value(wid);
        Tensor* g_off = t.grad_target(oid);
        Tensor* g_wts = t.grad_target(wid);
        Tensor* g_gate = has_gates ? t.grad_target(gid) : nullptr;
        std::vector<Tensor*> g_src(source_ids.size());
        for (std::size_t s = 0; s < source_ids.size(); ++s) g_src[s] = t.grad_target(source_ids[s]);
        std::vector<double> sample(static_cast<std::size_t>(dh));
        for (std::size_t e = 0; e < plan->entries.size(); ++e) {
          const SampleEntry& en = plan->entries[e];
          const double* gq = g.data() + static_cast<std::size_t>(en.query) * c;
          double gate = 1.0;
          if (has_gates && en.gate_col >= 0) gate = t.value(gid)[en.query * g_cols + static_cast<std::size_t>(en.gate_col)];
          const double coef = en.scale * gate;
          if (has_external && plan->external[e]) {
            // Partner-side terms only carry gradient into the gate.
            if (g_gate && en.gate_col >= 0) {
              const double* ext = plan->external_values.data() + e * c;
              double d = 0.0;
              for (std::size_t k = 0; k < c; ++k) d += gq[k] * ext[k];
              (*g_gate)[en.query * g_cols + static_cast<std::size_t>(en.gate_col)] += en.scale * d;
            }
            continue;
          }
          const double* vmap = t.value(source_ids[en.source]).data();
          double* dv = g_src[en.source] ? g_src[en.source]->data() : nullptr;
          const auto [sh, sw] = source_dims[en.source];
          const double* qo = off2.data() + static_cast<std::size_t>(en.query) * hk * 2;
          const double* qw = wts2.data() + static_cast<std::size_t>(en.query) * hk;
          double gate_dot = 0.0;
          for (const auto& r : plan->entry_refs(en)) {
            for (int m = 0; m < n_head; ++m) {
              for (int n = 0; n < n_key; ++n) {
                const std::size_t k = static_cast<std::size_t>(m * n_key + n);
                const double u = r.u + qo[2 * k];
                const double v = r.v + qo[2 * k + 1];
                std::fill(sample.begin(), sample.end(), 0.0);
                nn::detail::bilinear_accumulate(vmap, sh, sw, static_cast<int>(c), m * dh, dh, u, v, 1.0,
                                                sample.data());
                double sdot = 0.0;
                for (int i = 0; i < dh; ++i) sdot += gq[m * dh + i] * sample[static_cast<std::size_t>(i)];
                gate_dot += qw[k] * sdot;
                if (g_wts) (*g_wts)[static_cast<std::size_t>(en.query) * hk + k] += coef * sdot;
                if (dv || g_off) {
                  const auto pg = nn::detail::bilinear_backward(vmap, dv, sh, sw, static_cast<int>(c), m * dh, dh, u,
                                                                v, coef * qw[k], gq + m * dh);
                  if (g_off) {
                    (*g_off)[(static_cast<std::size_t>(en.query) * hk + k) * 2] += pg.du;
                    (*g_off)[(static_cast<std::size_t>(en.query) * hk + k) * 2 + 1] += pg.dv;
                  }
                }
              }
            }
          }
          if (g_gate && en.gate_col >= 0) {
            (*g_gate)[en.query * g_cols + static_cast<std::size_t>(en.gate_col)] += en.scale * gate_dot;
          }
        }
      });
}

AttnVars AttnVars::bind(const nn::BoundParams& p, const std::string& prefix, int n_head, int n_key) {
  AttnVars v;
  v.n_head = n_head;
  v.n_key = n_key;
  v.value_w = p[prefix + ".value_w"];
  v.output_w = p[prefix + ".output_w"];
  v.offset_w = p[prefix + ".offset_w"];
  v.offset_b = p[prefix + ".offset_b"];
  v.weight_w = p[prefix + ".weight_w"];
  v.weight_b = p[prefix + ".weight_b"];
  return v;
}

PredictionVars predict(const Var& query_with_pos, const AttnVars& vars) {
  PredictionVars out;
  out.offsets = nn::linear(query_with_pos, vars.offset_w, vars.offset_b);
  out.weights = nn::softmax(nn::linear(query_with_pos, vars.weight_w, vars.weight_b), static_cast<std::size_t>(vars.n_key));
  return out;
}

}  // namespace actbev::attention
