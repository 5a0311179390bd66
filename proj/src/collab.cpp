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

#include "actbev/collab.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"

namespace actbev::collab {

using attention::GateMode;
using attention::RefPoint;

// ---------------------------------------------------------------- byte io

namespace {

// Host byte order; every simulated endpoint runs in this process.
class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_doubles(std::span<const double> v) {
    for (double d : v) put(d);
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > in_.size()) throw ProtocolError("truncated message");
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<double> get_doubles(std::size_t n) {
    std::vector<double> v(n);
    for (auto& d : v) d = get<double>();
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kRequestMagic = 0x41435251;  // "ACRQ"

}  // namespace

// ---------------------------------------------------------------- poses

bool PoseTable::contains(int agent_id) const {
  return std::any_of(agents.begin(), agents.end(), [&](const PoseEntry& e) { return e.agent_id == agent_id; });
}

const PoseEntry& PoseTable::at(int agent_id) const {
  for (const auto& e : agents) {
    if (e.agent_id == agent_id) return e;
  }
  throw ProtocolError("no pose for agent " + std::to_string(agent_id));
}

geometry::AgentPoses PoseTable::poses_in_frame_of(int ego_id, const std::vector<int>& agent_ids) const {
  const auto ego_from_world = geometry::invert(at(ego_id).world_from_car);
  geometry::AgentPoses poses;
  for (int id : agent_ids) poses[id] = geometry::compose(ego_from_world, at(id).world_from_car);
  return poses;
}

std::vector<geometry::CameraRig> PoseTable::rigs_of(const std::vector<int>& agent_ids) const {
  std::vector<geometry::CameraRig> rigs;
  for (int id : agent_ids) {
    const auto& e = at(id);
    rigs.insert(rigs.end(), e.rigs.begin(), e.rigs.end());
  }
  return rigs;
}

PoseTable PoseTable::subset(const std::vector<int>& agent_ids) const {
  const std::set<int> ids(agent_ids.begin(), agent_ids.end());
  PoseTable t;
  for (int id : ids) t.agents.push_back(at(id));
  return t;
}

std::uint64_t PoseTable::payload_bytes() const {
  std::uint64_t doubles = 0;
  for (const auto& e : agents) doubles += 16 + e.rigs.size() * (16 + 4);
  return doubles * sizeof(double);
}

PoseTable broadcast_poses(const sim::Scene& scene) {
  if (scene.agents.empty()) throw std::invalid_argument("broadcast_poses: scene has no agents");
  PoseTable t;
  for (const auto& a : scene.agents) t.agents.push_back({a.id, a.pose, a.rigs});
  std::sort(t.agents.begin(), t.agents.end(),
            [](const PoseEntry& a, const PoseEntry& b) { return a.agent_id < b.agent_id; });
  return t;
}

Bytes serialize_pose_table(const PoseTable& table) {
  Writer w;
  for (const auto& e : table.agents) {
    w.put_doubles(e.world_from_car.row_major());
    for (const auto& r : e.rigs) {
      w.put_doubles(r.extrinsic.row_major());
      w.put(r.intrinsics.fx);
      w.put(r.intrinsics.fy);
      w.put(r.intrinsics.cx);
      w.put(r.intrinsics.cy);
    }
  }
  return w.take();
}

PoseTable deserialize_pose_table(std::span<const std::uint8_t> bytes, const PoseTable& shape) {
  Reader r(bytes);
  PoseTable t = shape;
  auto mat = [&r] {
    std::array<double, 16> v;
    for (auto& d : v) d = r.get<double>();
    return geometry::HomTransform::from_row_major(v);
  };
  for (auto& e : t.agents) {
    e.world_from_car = mat();
    for (auto& rig : e.rigs) {
      rig.extrinsic = mat();
      rig.intrinsics.fx = r.get<double>();
      rig.intrinsics.fy = r.get<double>();
      rig.intrinsics.cx = r.get<double>();
      rig.intrinsics.cy = r.get<double>();
    }
  }
  if (!r.done()) throw ProtocolError("pose table has trailing bytes");
  return t;
}

// ---------------------------------------------------------------- planning

std::size_t QueryRequestPlan::size() const {
  std::size_t n = 0;
  for (const auto& c : cameras) n += c.items.size();
  return n;
}

QueryRequestPlan plan_requests(const std::vector<selection::ActiveMask>& masks, const geometry::BevGrid& grid,
                               const PoseTable& poses, int ego_id, const std::vector<int>& agent_ids) {
  if (std::find(agent_ids.begin(), agent_ids.end(), ego_id) == agent_ids.end()) {
    throw std::invalid_argument("plan_requests: agent list lacks the ego");
  }
  const attention::HitTable table(grid, poses.rigs_of(agent_ids), poses.poses_in_frame_of(ego_id, agent_ids));
  const auto& cams = table.cameras();
  const std::size_t n_q = table.n_queries();
  std::vector<const selection::ActiveMask*> by_camera(cams.size(), nullptr);
  for (std::size_t g = 0; g < cams.size(); ++g) {
    for (const auto& m : masks) {
      if (m.car_id == cams[g].key.car_id && m.cam_id == cams[g].key.cam_id) by_camera[g] = &m;
    }
    if (!by_camera[g]) {
      throw std::invalid_argument(fmt::format("plan_requests: no mask for car {} camera {}", cams[g].key.car_id,
                                              cams[g].key.cam_id));
    }
    if (by_camera[g]->active.size() != n_q) throw std::invalid_argument("plan_requests: mask size differs from grid");
  }
  QueryRequestPlan plan;
  std::map<CameraKey, CameraPlan> wire;
  for (std::size_t q = 0; q < n_q; ++q) {
    for (const auto& h : table.hits(q)) {
      ++plan.dense_pairs;
      if (!by_camera[h.camera]->active[q]) continue;
      ++plan.active_pairs;
      const CameraKey key = cams[h.camera].key;
      if (key.car_id == ego_id) continue;
      auto& cp = wire[key];
      cp.key = key;
      const auto refs = table.refs(h);
      cp.items.push_back({static_cast<std::uint32_t>(q), {refs.begin(), refs.end()}});
    }
  }
  for (auto& [key, cp] : wire) plan.cameras.push_back(std::move(cp));
  return plan;
}

// ---------------------------------------------------------------- messages

Bytes encode_request(const RequestMessage& msg) {
  const auto hk = static_cast<std::size_t>(msg.n_head * msg.n_key);
  Writer w;
  w.put(kRequestMagic);
  w.put(msg.layer);
  w.put(msg.car_id);
  w.put(msg.n_head);
  w.put(msg.n_key);
  w.put(static_cast<std::uint32_t>(msg.entries.size()));
  for (const auto& e : msg.entries) {
    if (e.offsets.size() != hk * 2 || e.weights.size() != hk) {
      throw ProtocolError("request entry does not match n_head * n_key");
    }
    w.put(e.cam_id);
    w.put(e.query);
    w.put(static_cast<std::uint32_t>(e.refs.size()));
    for (const auto& r : e.refs) {
      w.put(r.u);
      w.put(r.v);
    }
    w.put_doubles(e.offsets);
    w.put_doubles(e.weights);
  }
  return w.take();
}

RequestMessage decode_request(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get<std::uint32_t>() != kRequestMagic) throw ProtocolError("not a request message");
  RequestMessage msg;
  msg.layer = r.get<std::int32_t>();
  msg.car_id = r.get<std::int32_t>();
  msg.n_head = r.get<std::int32_t>();
  msg.n_key = r.get<std::int32_t>();
  if (msg.n_head < 1 || msg.n_key < 1) throw ProtocolError("request has no heads or keys");
  const auto hk = static_cast<std::size_t>(msg.n_head * msg.n_key);
  const auto n = r.get<std::uint32_t>();
  msg.entries.resize(n);
  for (auto& e : msg.entries) {
    e.cam_id = r.get<std::int32_t>();
    e.query = r.get<std::uint32_t>();
    const auto n_ref = r.get<std::uint32_t>();
    if (n_ref > bytes.size()) throw ProtocolError("implausible reference count");
    e.refs.resize(n_ref);
    for (auto& p : e.refs) {
      p.u = r.get<double>();
      p.v = r.get<double>();
    }
    e.offsets = r.get_doubles(hk * 2);
    e.weights = r.get_doubles(hk);
  }
  if (!r.done()) throw ProtocolError("request has trailing bytes");
  return msg;
}

Bytes encode_response(const std::vector<std::vector<double>>& values) {
  Writer w;
  for (const auto& v : values) w.put_doubles(v);
  return w.take();
}

std::vector<std::vector<double>> decode_response(std::span<const std::uint8_t> bytes, std::size_t entries,
                                                 std::size_t channels) {
  if (bytes.size() != entries * channels * sizeof(double)) {
    throw ProtocolError(fmt::format("response holds {} bytes, expected {}", bytes.size(),
                                    entries * channels * sizeof(double)));
  }
  Reader r(bytes);
  std::vector<std::vector<double>> out(entries);
  for (auto& v : out) v = r.get_doubles(channels);
  return out;
}

// ---------------------------------------------------------------- partners

Partner::Partner(int car_id, const nn::ParamStore& params, const perception::ModelConfig& cfg,
                 attention::FeatureSet raw)
    : car_id_(car_id), params_(&params), cfg_(cfg), raw_(std::move(raw)) {
  for (const auto& [key, t] : raw_) {
    if (key.car_id != car_id) throw std::invalid_argument("partner holds another car's camera");
  }
}

const Tensor& Partner::value_map(int layer, int cam_id) {
  if (layer < 0 || layer >= cfg_.n_layers) throw ProtocolError(fmt::format("request for unknown layer {}", layer));
  const auto key = std::make_pair(layer, cam_id);
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  // Same op sequence as the ego-side encoder, so answers match bit for bit.
  nn::Tape tape;
  auto fit = features_.find(cam_id);
  if (fit == features_.end()) {
    const auto rit = raw_.find({car_id_, cam_id});
    if (rit == raw_.end()) {
      throw ProtocolError(fmt::format("car {} has no camera {}", car_id_, cam_id));
    }
    const nn::Shape want{static_cast<std::size_t>(cfg_.feature_h), static_cast<std::size_t>(cfg_.feature_w),
                         static_cast<std::size_t>(cfg_.raw_channels)};
    if (rit->second.shape() != want) throw std::invalid_argument("partner raw channels have the wrong shape");
    const nn::Var f = nn::add(nn::linear(tape.constant(rit->second), tape.constant(params_->get("stem.weight")),
                                         tape.constant(params_->get("stem.bias"))),
                              tape.constant(params_->get("cam_embed")));
    fit = features_.emplace(cam_id, f.value()).first;
  }
  const nn::Var v = nn::linear(tape.constant(fit->second),
                               tape.constant(params_->get(perception::layer_prefix(layer) + ".cross.value_w")));
  return values_.emplace(key, v.value()).first->second;
}

Bytes Partner::respond(std::span<const std::uint8_t> request) {
  const RequestMessage msg = decode_request(request);
  if (msg.car_id != car_id_) throw ProtocolError("request addressed to another car");
  if (msg.n_head != cfg_.n_head || msg.n_key != cfg_.n_key) throw ProtocolError("request head layout mismatch");
  const auto c = static_cast<std::size_t>(cfg_.channels);
  const int dh = cfg_.channels / cfg_.n_head;
  std::vector<std::vector<double>> answers;
  answers.reserve(msg.entries.size());
  for (const auto& e : msg.entries) {
    const Tensor& vmap = value_map(msg.layer, e.cam_id);
    std::vector<double> contrib(c, 0.0);
    for (const auto& r : e.refs) {
      for (int m = 0; m < cfg_.n_head; ++m) {
        for (int n = 0; n < cfg_.n_key; ++n) {
          const auto k = static_cast<std::size_t>(m * cfg_.n_key + n);
          nn::detail::bilinear_accumulate(vmap.data(), cfg_.feature_h, cfg_.feature_w, cfg_.channels, m * dh, dh,
                                          r.u + e.offsets[2 * k], r.v + e.offsets[2 * k + 1], e.weights[k],
                                          contrib.data() + m * dh);
        }
      }
    }
    answers.push_back(std::move(contrib));
  }
  return encode_response(answers);
}

void Exchange::add_partner(std::shared_ptr<Partner> partner) {
  const int id = partner->car_id();
  if (!partners_.emplace(id, std::move(partner)).second) {
    throw std::invalid_argument("duplicate partner " + std::to_string(id));
  }
}

std::vector<std::vector<double>> Exchange::fetch(int layer, const std::vector<perception::RemoteRequest>& requests) {
  std::vector<std::size_t> order(requests.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = requests[a];
    const auto& y = requests[b];
    return std::tie(x.key.car_id, x.key.cam_id, x.query) < std::tie(y.key.car_id, y.key.cam_id, y.query);
  });

  struct Outbox {
    std::shared_ptr<Partner> partner;
    std::vector<std::size_t> request_ids;
    Bytes request;
    Bytes response;
  };
  std::vector<Outbox> boxes;
  for (std::size_t i : order) {
    const int car = requests[i].key.car_id;
    if (boxes.empty() || boxes.back().partner->car_id() != car) {
      const auto it = partners_.find(car);
      if (it == partners_.end()) throw ProtocolError("no partner answers for car " + std::to_string(car));
      boxes.push_back({it->second, {}, {}, {}});
    }
    boxes.back().request_ids.push_back(i);
  }
  for (auto& box : boxes) {
    RequestMessage msg;
    msg.layer = layer;
    msg.car_id = box.partner->car_id();
    msg.n_head = n_head_;
    msg.n_key = n_key_;
    for (std::size_t i : box.request_ids) {
      const auto& r = requests[i];
      msg.entries.push_back({r.key.cam_id, r.query, r.refs, r.offsets, r.weights});
    }
    box.request = encode_request(msg);
  }
  perception::parallel_for(boxes.size(), [&](std::size_t b) { boxes[b].response = boxes[b].partner->respond(boxes[b].request); });

  std::vector<std::vector<double>> answers(requests.size());
  for (auto& box : boxes) {
    traffic_.bytes_up += box.request.size();
    traffic_.bytes_down += box.response.size();
    ++traffic_.messages;
    traffic_.entries += box.request_ids.size();
    auto values = decode_response(box.response, box.request_ids.size(), channels_);
    for (std::size_t k = 0; k < box.request_ids.size(); ++k) answers[box.request_ids[k]] = std::move(values[k]);
  }
  return answers;
}

// ---------------------------------------------------------------- accounting

void CommReport::accumulate(const CommReport& o) {
  n_ori += o.n_ori;
  n_act += o.n_act;
  pruned += o.pruned;
  active_cells += o.active_cells;
  total_cells += o.total_cells;
  bytes_up += o.bytes_up;
  bytes_down += o.bytes_down;
  pose_bytes += o.pose_bytes;
  full_map_bytes += o.full_map_bytes;
  p_ratio = n_ori ? static_cast<double>(n_act) / static_cast<double>(n_ori) : 1.0;
}

nlohmann::json CommReport::to_json() const {
  return {{"n_ori", n_ori},
          {"n_act", n_act},
          {"pruned", pruned},
          {"p_ratio", p_ratio},
          {"active_cells", active_cells},
          {"total_cells", total_cells},
          {"bytes_up", bytes_up},
          {"bytes_down", bytes_down},
          {"pose_bytes", pose_bytes},
          {"full_map_bytes", full_map_bytes}};
}

CommReport comm_report(const std::vector<LayerInteraction>& layers) {
  CommReport r;
  for (const auto& l : layers) {
    const std::size_t g_n = l.cameras.size();
    if (l.masks.size() != g_n) throw std::invalid_argument("comm_report: one mask per camera required");
    for (std::size_t g = 0; g < g_n; ++g) {
      if (l.masks[g].car_id != l.cameras[g].car_id || l.masks[g].cam_id != l.cameras[g].cam_id) {
        throw std::invalid_argument("comm_report: masks out of camera order");
      }
    }
    const std::size_t cols = l.hit_mask.rank() == 2 ? l.hit_mask.cols() : 0;
    const std::size_t n_q = cols ? l.hit_mask.rows() : 0;
    if (g_n > cols) throw std::invalid_argument("comm_report: hit mask narrower than the camera list");
    for (const auto& m : l.masks) {
      if (m.active.size() != n_q) throw std::invalid_argument("comm_report: mask size differs from hit mask");
    }
    r.total_cells += n_q;
    for (std::size_t q = 0; q < n_q; ++q) {
      bool any = false;
      for (std::size_t g = 0; g < g_n; ++g) {
        if (l.hit_mask[q * cols + g] == 0.0) continue;
        ++r.n_ori;
        if (l.masks[g].active[q]) {
          ++r.n_act;
          any = true;
        }
      }
      if (any) ++r.active_cells;
    }
  }
  r.pruned = r.n_ori - r.n_act;
  r.p_ratio = r.n_ori ? static_cast<double>(r.n_act) / static_cast<double>(r.n_ori) : 1.0;
  return r;
}

std::vector<selection::InterestScoreMap> score_maps(const perception::EncodedBev& enc, int layer,
                                                    const geometry::BevGrid& grid) {
  const auto l = static_cast<std::size_t>(layer);
  if (l >= enc.scores.size()) throw std::out_of_range("score_maps: no such layer");
  const Tensor& s = enc.scores[l];
  std::vector<selection::InterestScoreMap> maps;
  if (s.numel() == 0) return maps;
  const auto& cams = enc.cameras[l];
  const std::size_t g_n = cams.size();
  const auto n_q = static_cast<std::size_t>(grid.n_cells());
  if (s.numel() != n_q * g_n) throw std::invalid_argument("score_maps: scores do not match the grid");
  for (std::size_t g = 0; g < g_n; ++g) {
    selection::InterestScoreMap m{cams[g].car_id, cams[g].cam_id, grid.h_cells, grid.w_cells,
                                  std::vector<double>(n_q)};
    for (std::size_t q = 0; q < n_q; ++q) m.scores[q] = s[q * g_n + g];
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<LayerInteraction> interactions(const perception::EncodedBev& enc, const geometry::BevGrid& grid,
                                           GateMode mode, double epsilon) {
  const auto n_q = static_cast<std::size_t>(grid.n_cells());
  std::vector<LayerInteraction> out;
  for (std::size_t l = 0; l < enc.cameras.size(); ++l) {
    LayerInteraction li;
    li.cameras = enc.cameras[l];
    li.hit_mask = enc.hit_masks.at(l);
    if (mode == GateMode::Hard) {
      li.masks = selection::gate(score_maps(enc, static_cast<int>(l), grid), epsilon);
    } else {
      for (const auto& k : li.cameras) li.masks.push_back({k.car_id, k.cam_id, std::vector<char>(n_q, 1)});
    }
    out.push_back(std::move(li));
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

FrameResult run_frame(const nn::ParamStore& params, const perception::ModelConfig& cfg, const sim::Scene& scene,
                      const attention::FeatureSet& raw, int ego_id, const EvalOptions& options) {
  const PoseTable table = broadcast_poses(scene);
  const auto participants = perception::participants_for(scene, ego_id, options.n_car);

  perception::ModelInput input;
  input.ego_id = ego_id;
  input.rigs = table.rigs_of(participants);
  input.poses = table.poses_in_frame_of(ego_id, participants);
  Exchange exchange(static_cast<std::size_t>(cfg.channels), cfg.n_head, cfg.n_key);
  std::uint64_t full_map = 0;
  for (int id : participants) {
    attention::FeatureSet own;
    for (const auto& rig : table.at(id).rigs) {
      const auto it = raw.find(rig.key());
      if (it == raw.end()) throw std::invalid_argument("raw channels missing for a participating camera");
      own[rig.key()] = it->second;
      if (id != ego_id) full_map += static_cast<std::uint64_t>(cfg.feature_h) * cfg.feature_w * cfg.channels * sizeof(double);
    }
    if (id != ego_id && options.use_exchange) {
      exchange.add_partner(std::make_shared<Partner>(id, params, cfg, std::move(own)));
    } else {
      input.raw.insert(own.begin(), own.end());
    }
  }

  perception::EncodeOptions eo;
  eo.mode = options.mode;
  eo.epsilon = options.epsilon;
  eo.remote = options.use_exchange ? &exchange : nullptr;
  FrameResult fr;
  fr.enc = perception::encode_bev(params, cfg, input, eo);
  fr.comm = comm_report(interactions(fr.enc, cfg.grid, options.mode, options.epsilon));
  fr.comm.bytes_up = exchange.traffic().bytes_up;
  fr.comm.bytes_down = exchange.traffic().bytes_down;
  fr.comm.pose_bytes = table.subset(participants).payload_bytes();
  fr.comm.full_map_bytes = full_map;
  return fr;
}

EvalSummary evaluate(const nn::ParamStore& params, const perception::ModelConfig& cfg,
                     const perception::Dataset& data, const EvalOptions& options) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty scene set");
  if (options.n_car < 1) throw ConfigError("n_car must be >= 1");
  perception::check_compatible(params, cfg);
  const auto head = perception::DetHeadParams::load_from(params);

  struct Job {
    std::size_t scene;
    int ego;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (const auto& a : data.scenes[s].agents) jobs.push_back({s, a.id});
  }
  struct Out {
    std::vector<perception::DetectionBox> preds;
    CommReport comm;
  };
  std::vector<Out> outs(jobs.size());
  perception::parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto fr = run_frame(params, cfg, data.scenes[job.scene], data.raw[job.scene], job.ego, options);
    outs[i].preds = perception::detect(fr.enc.bev, head, cfg.grid, options.score_floor, options.nms_iou);
    outs[i].comm = fr.comm;
  });

  EvalSummary sum;
  sum.n_car = options.n_car;
  std::vector<perception::BoxRecord> preds, gts;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    const int sid = static_cast<int>(job.scene);
    for (const auto& b : outs[i].preds) preds.push_back({sid, job.ego, b});
    for (const auto& b : sim::ground_truth(data.scenes[job.scene], job.ego, cfg.grid)) gts.push_back({sid, job.ego, b});
    sum.comm.accumulate(outs[i].comm);
  }
  sum.iou = perception::eval_ap(preds, gts);
  sum.center = perception::eval_center_distance_ap(preds, gts);
  return sum;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"n_car", r.n_car}, {"ap50", r.ap50}, {"ap70", r.ap70}, {"cd_map", r.cd_map}, {"comm", r.comm.to_json()}});
  }
  return {{"rows", rows_j}};
}

void SweepResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "n_car,ap50,ap70,cd_map,n_ori,n_act,p_ratio,bytes_up,bytes_down\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{},{},{:.17g},{},{}\n", r.n_car, r.ap50, r.ap70, r.cd_map,
                       r.comm.n_ori, r.comm.n_act, r.comm.p_ratio, r.comm.bytes_up, r.comm.bytes_down);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void SweepResult::write_plot_data(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "n_car,pct_queries,ap50,ap70\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.n_car, 100.0 * r.comm.p_ratio, r.ap50, r.ap70);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

SweepResult run_sweep(const nn::ParamStore& params, const perception::ModelConfig& cfg,
                      const perception::Dataset& data, int n_max, EvalOptions options) {
  if (n_max < 1) throw ConfigError("sweep n_max must be >= 1");
  SweepResult res;
  for (int n = 1; n <= n_max; ++n) {
    options.n_car = n;
    const EvalSummary s = evaluate(params, cfg, data, options);
    res.rows.push_back({n, s.iou.ap(0.5), s.iou.ap(0.7), s.center.mean_ap(), s.comm});
  }
  return res;
}

}  // namespace actbev::collab
