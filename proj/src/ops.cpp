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

#include "actbev/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace actbev::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw std::invalid_argument("operation on an unbound variable");
  return *v.tape();
}

void require_same_size(const Var& a, const Var& b, const char* op) {
  if (a.value().numel() != b.value().numel()) {
    throw std::invalid_argument(std::string(op) + ": size mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

template <class F>
Var unary(const Var& x, F&& forward_and_deriv) {
  // forward_and_deriv(x_i) -> {y_i, dy_i/dx_i}
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  Tensor d(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    auto [yi, di] = forward_and_deriv(xv[i]);
    y[i] = yi;
    d[i] = di;
  }
  return tape_of(x).record(std::move(y), {x}, [xid = x.id(), d = std::move(d)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* gx = t.grad_target(xid)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * d[i];
    }
  });
}

Var linear_impl(const Var& x, const Var& w, const Var* b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
  const std::size_t c_out = wv.dim(0);
  const std::size_t c_in = wv.dim(1);
  if (xv.cols() != c_in) {
    throw std::invalid_argument("linear: input " + shape_str(xv.shape()) + " does not match weight " +
                                shape_str(wv.shape()));
  }
  if (b && b->value().numel() != c_out) throw std::invalid_argument("linear: bias length mismatch");
  const std::size_t n = xv.rows();
  Shape out_shape = xv.shape();
  out_shape.back() = c_out;
  Tensor y(out_shape);
  MapMat ym(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c_out));
  CMapMat xm(xv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c_in));
  CMapMat wm(wv.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in));
  ym.noalias() = xm * wm.transpose();
  std::vector<Var> parents{x, w};
  if (b) {
    ym.rowwise() += CMapVec(b->value().data(), static_cast<Eigen::Index>(c_out)).transpose();
    parents.push_back(*b);
  }
  const std::size_t bid = b ? b->id() : 0;
  const bool has_b = b != nullptr;
  return tape_of(x).record(std::move(y), parents,
                           [xid = x.id(), wid = w.id(), bid, has_b, n, c_in, c_out](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad_of(self);
                             CMapMat gm(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c_out));
                             if (Tensor* gx = t.grad_target(xid)) {
                               CMapMat wm2(t.value(wid).data(), static_cast<Eigen::Index>(c_out),
                                           static_cast<Eigen::Index>(c_in));
                               MapMat(gx->data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c_in))
                                   .noalias() += gm * wm2;
                             }
                             if (Tensor* gw = t.grad_target(wid)) {
                               CMapMat xm2(t.value(xid).data(), static_cast<Eigen::Index>(n),
                                           static_cast<Eigen::Index>(c_in));
                               MapMat(gw->data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(c_in))
                                   .noalias() += gm.transpose() * xm2;
                             }
                             if (has_b) {
                               if (Tensor* gb = t.grad_target(bid)) {
                                 MapVec(gb->data(), static_cast<Eigen::Index>(c_out)) +=
                                     gm.colwise().sum().transpose();
                               }
                             }
                           });
}

}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }
Var linear(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }

Var add(const Var& a, const Var& b) {
  require_same_size(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return tape_of(a).record(std::move(y), {a, b}, [aid = a.id(), bid = b.id()](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_target(aid)) *ga += g;
    if (Tensor* gb = t.grad_target(bid)) *gb += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_size(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return tape_of(a).record(std::move(y), {a, b}, [aid = a.id(), bid = b.id()](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_target(aid)) *ga += g;
    if (Tensor* gb = t.grad_target(bid)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_size(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return tape_of(a).record(std::move(y), {a, b}, [aid = a.id(), bid = b.id()](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_target(aid)) {
      const Tensor& bv = t.value(bid);
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(bid)) {
      const Tensor& av = t.value(aid);
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return std::pair{s * x, s}; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0}; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) {
    const double y = std::tanh(v);
    return std::pair{y, 1.0 - y * y};
  });
}

Var sigmoid(const Var& x) {
  return unary(x, [](double v) {
    // Branching keeps exp() from overflowing for large |v|.
    const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{y, y * (1.0 - y)};
  });
}

Var softmax(const Var& x, std::size_t group) {
  const Tensor& xv = x.value();
  if (group == 0 || xv.numel() % group != 0) throw std::invalid_argument("softmax: bad group size");
  Tensor y(xv.shape());
  const std::size_t n_groups = xv.numel() / group;
  for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
    const double* in = xv.data() + gidx * group;
    double* out = y.data() + gidx * group;
    const double mx = *std::max_element(in, in + group);
    double total = 0.0;
    for (std::size_t k = 0; k < group; ++k) {
      out[k] = std::exp(in[k] - mx);
      total += out[k];
    }
    for (std::size_t k = 0; k < group; ++k) out[k] /= total;
  }
  return tape_of(x).record(std::move(y), {x}, [xid = x.id(), group, n_groups](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_target(xid);
    if (!gx) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& yv = t.value(self);
    for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
      const std::size_t o = gidx * group;
      double dot = 0.0;
      for (std::size_t k = 0; k < group; ++k) dot += g[o + k] * yv[o + k];
      for (std::size_t k = 0; k < group; ++k) (*gx)[o + k] += yv[o + k] * (g[o + k] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  const std::size_t n = xv.rows();
  if (gamma.value().numel() != c || beta.value().numel() != c) {
    throw std::invalid_argument("layer_norm: affine parameters must match the trailing dimension");
  }
  Tensor y(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += in[k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (in[k] - mu) * (in[k] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) {
      xhat[r * c + k] = (in[k] - mu) * inv_std[r];
      y[r * c + k] = xhat[r * c + k] * gv[k] + bv[k];
    }
  }
  return tape_of(x).record(
      std::move(y), {x, gamma, beta},
      [xid = x.id(), gid = gamma.id(), bid = beta.id(), xhat = std::move(xhat), inv_std = std::move(inv_std), n,
       c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gv2 = t.value(gid);
        if (Tensor* gg = t.grad_target(gid)) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < c; ++k) (*gg)[k] += g[r * c + k] * xhat[r * c + k];
        }
        if (Tensor* gb = t.grad_target(bid)) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < c; ++k) (*gb)[k] += g[r * c + k];
        }
        if (Tensor* gx = t.grad_target(xid)) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
              const double dxh = g[r * c + k] * gv2[k];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[r * c + k];
            }
            mean_dxhat *= inv_c;
            mean_dxhat_xhat *= inv_c;
            for (std::size_t k = 0; k < c; ++k) {
              const double dxh = g[r * c + k] * gv2[k];
              (*gx)[r * c + k] += inv_std[r] * (dxh - mean_dxhat - xhat[r * c + k] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(y), {x}, [xid = x.id()](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xid)) *gx += t.grad_of(self);
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().vec()) s += v;
  return tape_of(x).record(Tensor::scalar(s), {x}, [xid = x.id()](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xid)) {
      const double g = t.grad_of(self)[0];
      for (auto& v : gx->vec()) v += g;
    }
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var weighted_sum(const Var& x, const Tensor& w) {
  if (w.numel() != x.value().numel()) throw std::invalid_argument("weighted_sum: weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) s += w[i] * x.value()[i];
  return tape_of(x).record(Tensor::scalar(s), {x}, [xid = x.id(), w](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xid)) {
      const double g = t.grad_of(self)[0];
      for (std::size_t i = 0; i < w.numel(); ++i) (*gx)[i] += g * w[i];
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows();
  if (bv.rows() != n) throw std::invalid_argument("concat_cols: row count mismatch");
  const std::size_t ca = av.cols();
  const std::size_t cb = bv.cols();
  Tensor y({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(av.data() + r * ca, ca, y.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
  }
  return tape_of(a).record(std::move(y), {a, b}, [aid = a.id(), bid = b.id(), n, ca, cb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_target(aid)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < ca; ++k) (*ga)[r * ca + k] += g[r * (ca + cb) + k];
    }
    if (Tensor* gb = t.grad_target(bid)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < cb; ++k) (*gb)[r * cb + k] += g[r * (ca + cb) + ca + k];
    }
  });
}

Var pairwise_add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t h = av.cols();
  if (bv.cols() != h) throw std::invalid_argument("pairwise_add: width mismatch");
  const std::size_t p = av.rows();
  const std::size_t gcount = bv.rows();
  Tensor y({p * gcount, h});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < gcount; ++j)
      for (std::size_t k = 0; k < h; ++k) y[(i * gcount + j) * h + k] = av[i * h + k] + bv[j * h + k];
  return tape_of(a).record(std::move(y), {a, b},
                           [aid = a.id(), bid = b.id(), p, gcount, h](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad_of(self);
                             Tensor* ga = t.grad_target(aid);
                             Tensor* gb = t.grad_target(bid);
                             for (std::size_t i = 0; i < p; ++i)
                               for (std::size_t j = 0; j < gcount; ++j)
                                 for (std::size_t k = 0; k < h; ++k) {
                                   const double gv = g[(i * gcount + j) * h + k];
                                   if (ga) (*ga)[i * h + k] += gv;
                                   if (gb) (*gb)[j * h + k] += gv;
                                 }
                           });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  if (rows.empty()) throw std::invalid_argument("gather_rows: empty selection");
  Tensor y({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(xv.data() + rows[i] * c, c, y.data() + i * c);
  }
  return tape_of(x).record(std::move(y), {x}, [xid = x.id(), rows, c](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xid)) {
      const Tensor& g = t.grad_of(self);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < c; ++k) (*gx)[rows[i] * c + k] += g[i * c + k];
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  const std::size_t n = xv.rows();
  if (count == 0 || begin + count > c) throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor y({n, count});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(xv.data() + r * c + begin, count, y.data() + r * count);
  return tape_of(x).record(std::move(y), {x}, [xid = x.id(), n, c, begin, count](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad_target(xid)) {
      const Tensor& g = t.grad_of(self);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < count; ++k) (*gx)[r * c + begin + k] += g[r * count + k];
    }
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets, const Tensor& weights) {
  const Tensor& z = logits.value();
  if (targets.numel() != z.numel() || weights.numel() != z.numel()) {
    throw std::invalid_argument("bce_with_logits: target/weight size mismatch");
  }
  double total = 0.0;
  Tensor d(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    // log(1 + exp(-|z|)) form is stable for both signs.
    const double zi = z[i];
    const double loss = std::max(zi, 0.0) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
    total += weights[i] * loss;
    const double p = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
    d[i] = weights[i] * (p - targets[i]);
  }
  return tape_of(logits).record(Tensor::scalar(total), {logits},
                                [zid = logits.id(), d = std::move(d)](Tape& t, std::size_t self) {
                                  if (Tensor* gz = t.grad_target(zid)) {
                                    const double g = t.grad_of(self)[0];
                                    for (std::size_t i = 0; i < d.numel(); ++i) (*gz)[i] += g * d[i];
                                  }
                                });
}

namespace detail {

namespace {

struct Corners {
  int x0 = 0;
  int y0 = 0;
  double fx = 0.0;
  double fy = 0.0;
  bool any = false;
};

Corners corners_of(int h, int w, double u, double v) {
  Corners c;
  // Rejects NaN as well: every corner is out of bounds past these limits.
  if (!(u > -1.0 && u < static_cast<double>(w) && v > -1.0 && v < static_cast<double>(h))) return c;
  const double xf = std::floor(u);
  const double yf = std::floor(v);
  c.x0 = static_cast<int>(xf);
  c.y0 = static_cast<int>(yf);
  c.fx = u - xf;
  c.fy = v - yf;
  c.any = true;
  return c;
}

}  // namespace

void bilinear_accumulate(const double* f, int h, int w, int channels, int c_begin, int c_count, double u,
                         double v, double weight, double* out) {
  const Corners cr = corners_of(h, w, u, v);
  if (!cr.any) return;
  const double wts[4] = {(1.0 - cr.fx) * (1.0 - cr.fy), cr.fx * (1.0 - cr.fy), (1.0 - cr.fx) * cr.fy,
                         cr.fx * cr.fy};
  const int xs[4] = {cr.x0, cr.x0 + 1, cr.x0, cr.x0 + 1};
  const int ys[4] = {cr.y0, cr.y0, cr.y0 + 1, cr.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h) continue;
    const double cw = weight * wts[k];
    if (cw == 0.0) continue;
    const double* src = f + (static_cast<std::size_t>(ys[k]) * w + xs[k]) * channels + c_begin;
    for (int c = 0; c < c_count; ++c) out[c] += cw * src[c];
  }
}

PositionGrad bilinear_backward(const double* f, double* df, int h, int w, int channels, int c_begin, int c_count,
                               double u, double v, double weight, const double* gout) {
  PositionGrad pg;
  const Corners cr = corners_of(h, w, u, v);
  if (!cr.any) return pg;
  const double wts[4] = {(1.0 - cr.fx) * (1.0 - cr.fy), cr.fx * (1.0 - cr.fy), (1.0 - cr.fx) * cr.fy,
                         cr.fx * cr.fy};
  const double dwu[4] = {-(1.0 - cr.fy), 1.0 - cr.fy, -cr.fy, cr.fy};
  const double dwv[4] = {-(1.0 - cr.fx), -cr.fx, 1.0 - cr.fx, cr.fx};
  const int xs[4] = {cr.x0, cr.x0 + 1, cr.x0, cr.x0 + 1};
  const int ys[4] = {cr.y0, cr.y0, cr.y0 + 1, cr.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h) continue;
    const std::size_t off = (static_cast<std::size_t>(ys[k]) * w + xs[k]) * channels + c_begin;
    const double* src = f + off;
    double s = 0.0;
    for (int c = 0; c < c_count; ++c) s += gout[c] * src[c];
    pg.du += weight * s * dwu[k];
    pg.dv += weight * s * dwv[k];
    if (df) {
      const double cw = weight * wts[k];
      double* dst = df + off;
      for (int c = 0; c < c_count; ++c) dst[c] += cw * gout[c];
    }
  }
  return pg;
}

}  // namespace detail

Var bilinear_sample(const Var& f, const Var& pos) {
  const Tensor& fv = f.value();
  const Tensor& pv = pos.value();
  if (fv.rank() != 3) throw std::invalid_argument("bilinear_sample: feature map must be [H, W, C]");
  if (pv.cols() != 2) throw std::invalid_argument("bilinear_sample: positions must be [N, 2]");
  const int h = static_cast<int>(fv.dim(0));
  const int w = static_cast<int>(fv.dim(1));
  const int c = static_cast<int>(fv.dim(2));
  const std::size_t n = pv.rows();
  Tensor y({n, static_cast<std::size_t>(c)});
  for (std::size_t i = 0; i < n; ++i) {
    detail::bilinear_accumulate(fv.data(), h, w, c, 0, c, pv[2 * i], pv[2 * i + 1], 1.0,
                                y.data() + i * static_cast<std::size_t>(c));
  }
  return tape_of(f).record(std::move(y), {f, pos}, [fid = f.id(), pid = pos.id(), h, w, c, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& fv2 = t.value(fid);
    const Tensor& pv2 = t.value(pid);
    Tensor* gf = t.grad_target(fid);
    Tensor* gp = t.grad_target(pid);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pg = detail::bilinear_backward(fv2.data(), gf ? gf->data() : nullptr, h, w, c, 0, c, pv2[2 * i],
                                                pv2[2 * i + 1], 1.0, g.data() + i * static_cast<std::size_t>(c));
      if (gp) {
        (*gp)[2 * i] += pg.du;
        (*gp)[2 * i + 1] += pg.dv;
      }
    }
  });
}

}  // namespace actbev::nn
