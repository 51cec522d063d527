#pragma once

// Differentiable primitives. Forward kernels use Eigen row-major maps for the
// GEMM-shaped work; elementwise/reduction kernels are plain loops. Each op
// records a backward closure with hand-derived gradients; grad_check verifies
// every one of them against central finite differences.

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "dfallm/nn/rng.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::nn {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<EMat<T>>;
template <class T>
using CMap = Eigen::Map<const EMat<T>>;
template <class T>
using StridedMap = Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>>;

// ---------------------------------------------------------------------------
// elementwise / shape helpers

template <class T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape != y.shape)
    throw ShapeError("add: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] + (*y.data)[i];
  record<T>(out, "add", {x, y}, [n](Node<T>& nd) {
    accumulate_grad(nd.parents[0], nd.out_grad->data(), n, "add");
    accumulate_grad(nd.parents[1], nd.out_grad->data(), n, "add");
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape != y.shape)
    throw ShapeError("mul: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * (*y.data)[i];
  record<T>(out, "mul", {x, y}, [n](Node<T>& nd) {
    auto& g = *nd.out_grad;
    if (nd.parents[0].requires_grad) {
      std::vector<T> gx(n);
      for (int64_t i = 0; i < n; ++i) gx[i] = g[i] * (*nd.parents[1].data)[i];
      accumulate_grad(nd.parents[0], gx.data(), n, "mul");
    }
    if (nd.parents[1].requires_grad) {
      std::vector<T> gy(n);
      for (int64_t i = 0; i < n; ++i) gy[i] = g[i] * (*nd.parents[0].data)[i];
      accumulate_grad(nd.parents[1], gy.data(), n, "mul");
    }
  });
  return out;
}

template <class T>
Tensor<T> scale_by(const Tensor<T>& x, double c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const int64_t n = x.numel();
  const T cc = static_cast<T>(c);
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * cc;
  record<T>(out, "scale", {x}, [n, cc](Node<T>& nd) {
    if (!nd.parents[0].requires_grad) return;
    std::vector<T> gx(n);
    for (int64_t i = 0; i < n; ++i) gx[i] = (*nd.out_grad)[i] * cc;
    accumulate_grad(nd.parents[0], gx.data(), n, "scale");
  });
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += (*x.data)[i];
  (*out.data)[0] = s;
  const int64_t n = x.numel();
  record<T>(out, "sum_all", {x}, [n](Node<T>& nd) {
    if (!nd.parents[0].requires_grad) return;
    std::vector<T> gx(n, (*nd.out_grad)[0]);
    accumulate_grad(nd.parents[0], gx.data(), n, "sum_all");
  });
  return out;
}

// GELU, tanh approximation (the form used throughout the models)
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const int64_t n = x.numel();
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T a = static_cast<T>(0.044715);
  for (int64_t i = 0; i < n; ++i) {
    T v = (*x.data)[i];
    T t = std::tanh(c * (v + a * v * v * v));
    (*out.data)[i] = T(0.5) * v * (T(1) + t);
  }
  record<T>(out, "gelu", {x}, [n, c, a](Node<T>& nd) {
    if (!nd.parents[0].requires_grad) return;
    std::vector<T> gx(n);
    for (int64_t i = 0; i < n; ++i) {
      T v = (*nd.parents[0].data)[i];
      T t = std::tanh(c * (v + a * v * v * v));
      T du = c * (T(1) + T(3) * a * v * v);
      T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      gx[i] = (*nd.out_grad)[i] * d;
    }
    accumulate_grad(nd.parents[0], gx.data(), n, "gelu");
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul / linear

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  Map<T>(out.ptr(), m, n).noalias() = CMap<T>(a.ptr(), m, k) * CMap<T>(b.ptr(), k, n);
  record<T>(out, "matmul", {a, b}, [m, k, n](Node<T>& nd) {
    CMap<T> g(nd.out_grad->data(), m, n);
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      Map<T>(pa.gptr(), m, k).noalias() += g * CMap<T>(pb.ptr(), k, n).transpose();
      if (finite_checks_flag()) check_finite(*pa.grad, "matmul", "gradient");
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      Map<T>(pb.gptr(), k, n).noalias() += CMap<T>(pa.ptr(), m, k).transpose() * g;
      if (finite_checks_flag()) check_finite(*pb.grad, "matmul", "gradient");
    }
  });
  return out;
}

namespace detail {
// Views any rank-2/3 tensor as [rows, last_dim].
template <class T>
inline std::pair<int, int> as_2d(const Tensor<T>& x, const char* op) {
  if (x.shape.size() == 2) return {x.shape[0], x.shape[1]};
  if (x.shape.size() == 3) return {x.shape[0] * x.shape[1], x.shape[2]};
  throw ShapeError(std::string(op) + ": expects rank-2/3 input, got " + shape_str(x.shape));
}
}  // namespace detail

// y = x W^T + b, with W stored [out_features, in_features]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  auto [rows, in] = detail::as_2d(x, "linear");
  if (w.shape.size() != 2 || w.shape[1] != in)
    throw ShapeError("linear: weight " + shape_str(w.shape) + " incompatible with input " + shape_str(x.shape));
  const int out_f = w.shape[0];
  if (bias.defined() && (bias.shape.size() != 1 || bias.shape[0] != out_f))
    throw ShapeError("linear: bias " + shape_str(bias.shape) + " vs out_features " + std::to_string(out_f));
  std::vector<int> oshape = x.shape;
  oshape.back() = out_f;
  Tensor<T> out = Tensor<T>::zeros(oshape);
  Map<T> y(out.ptr(), rows, out_f);
  y.noalias() = CMap<T>(x.ptr(), rows, in) * CMap<T>(w.ptr(), out_f, in).transpose();
  if (bias.defined()) {
    CMap<T> bm(bias.ptr(), 1, out_f);
    y.rowwise() += bm.row(0);
  }
  std::vector<Tensor<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  const int r = rows, i_f = in, o_f = out_f;
  record<T>(out, "linear", std::move(parents), [r, i_f, o_f](Node<T>& nd) {
    CMap<T> g(nd.out_grad->data(), r, o_f);
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      Map<T>(px.gptr(), r, i_f).noalias() += g * CMap<T>(pw.ptr(), o_f, i_f);
      if (finite_checks_flag()) check_finite(*px.grad, "linear", "gradient");
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      Map<T>(pw.gptr(), o_f, i_f).noalias() += g.transpose() * CMap<T>(px.ptr(), r, i_f);
      if (finite_checks_flag()) check_finite(*pw.grad, "linear", "gradient");
    }
    if (nd.parents.size() > 2 && nd.parents[2].requires_grad) {
      auto& pb = nd.parents[2];
      pb.ensure_grad();
      // accumulated per column in a fixed row order: Eigen's partial-redux
      // assignment is alignment-dependent and would break bit reproducibility
      T* bg = pb.gptr();
      const T* gp = nd.out_grad->data();
      for (int row = 0; row < r; ++row)
        for (int j = 0; j < o_f; ++j) bg[j] += gp[static_cast<int64_t>(row) * o_f + j];
      if (finite_checks_flag()) check_finite(*pb.grad, "linear", "gradient");
    }
  });
  return out;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>{});
}

// y = x W^T + b + scale * (x A^T) B^T — a linear layer with a low-rank bypass.
// A is [r, in], B is [out, r]; with B zero the bypass contributes nothing.
template <class T>
Tensor<T> lora_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                      const Tensor<T>& a, const Tensor<T>& b, double scale) {
  auto [rows, in] = detail::as_2d(x, "lora_linear");
  const int out_f = w.shape[0];
  const int r = a.shape[0];
  if (w.shape.size() != 2 || w.shape[1] != in)
    throw ShapeError("lora_linear: weight " + shape_str(w.shape) + " vs input " + shape_str(x.shape));
  if (a.shape.size() != 2 || a.shape[1] != in)
    throw ShapeError("lora_linear: A " + shape_str(a.shape) + " vs in_features " + std::to_string(in));
  if (b.shape.size() != 2 || b.shape[0] != out_f || b.shape[1] != r)
    throw ShapeError("lora_linear: B " + shape_str(b.shape) + " vs [out=" + std::to_string(out_f) +
                     ", r=" + std::to_string(r) + "]");
  std::vector<int> oshape = x.shape;
  oshape.back() = out_f;
  Tensor<T> out = Tensor<T>::zeros(oshape);
  CMap<T> xm(x.ptr(), rows, in);
  Map<T> y(out.ptr(), rows, out_f);
  y.noalias() = xm * CMap<T>(w.ptr(), out_f, in).transpose();
  // u = x A^T, saved for backward
  auto u = std::make_shared<std::vector<T>>(static_cast<size_t>(rows) * r);
  Map<T> um(u->data(), rows, r);
  um.noalias() = xm * CMap<T>(a.ptr(), r, in).transpose();
  y.noalias() += static_cast<T>(scale) * um * CMap<T>(b.ptr(), out_f, r).transpose();
  if (bias.defined()) y.rowwise() += CMap<T>(bias.ptr(), 1, out_f).row(0);

  std::vector<Tensor<T>> parents = {x, w, a, b};
  if (bias.defined()) parents.push_back(bias);
  const int rw = rows, i_f = in, o_f = out_f, rk = r;
  const T sc = static_cast<T>(scale);
  record<T>(out, "lora_linear", std::move(parents), [rw, i_f, o_f, rk, sc, u](Node<T>& nd) {
    CMap<T> g(nd.out_grad->data(), rw, o_f);
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    auto& pa = nd.parents[2];
    auto& pb = nd.parents[3];
    CMap<T> um(u->data(), rw, rk);
    CMap<T> am(pa.ptr(), rk, i_f);
    CMap<T> bm(pb.ptr(), o_f, rk);
    // du = scale * g B
    EMat<T> du = sc * (g * bm);
    if (px.requires_grad) {
      px.ensure_grad();
      Map<T> gx(px.gptr(), rw, i_f);
      gx.noalias() += g * CMap<T>(pw.ptr(), o_f, i_f);
      gx.noalias() += du * am;
      if (finite_checks_flag()) check_finite(*px.grad, "lora_linear", "gradient");
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      Map<T>(pw.gptr(), o_f, i_f).noalias() += g.transpose() * CMap<T>(px.ptr(), rw, i_f);
      if (finite_checks_flag()) check_finite(*pw.grad, "lora_linear", "gradient");
    }
    if (pa.requires_grad) {
      pa.ensure_grad();
      Map<T>(pa.gptr(), rk, i_f).noalias() += du.transpose() * CMap<T>(px.ptr(), rw, i_f);
      if (finite_checks_flag()) check_finite(*pa.grad, "lora_linear", "gradient");
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      Map<T>(pb.gptr(), o_f, rk).noalias() += sc * (g.transpose() * um);
      if (finite_checks_flag()) check_finite(*pb.grad, "lora_linear", "gradient");
    }
    if (nd.parents.size() > 4 && nd.parents[4].requires_grad) {
      auto& pbias = nd.parents[4];
      pbias.ensure_grad();
      // fixed-order accumulation; see the note in linear's backward
      T* bg = pbias.gptr();
      const T* gp = nd.out_grad->data();
      for (int row = 0; row < rw; ++row)
        for (int j = 0; j < o_f; ++j) bg[j] += gp[static_cast<int64_t>(row) * o_f + j];
      if (finite_checks_flag()) check_finite(*pbias.grad, "lora_linear", "gradient");
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// normalization / softmax

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5) {
  auto [rows, d] = detail::as_2d(x, "layer_norm");
  if (gain.shape != std::vector<int>{d} || bias.shape != std::vector<int>{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                     shape_str(gain.shape) + " / " + shape_str(bias.shape));
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  auto mean = std::make_shared<std::vector<T>>(rows);
  const T* xp = x.ptr();
  T* op = out.ptr();
  const T* gp = gain.ptr();
  const T* bp = bias.ptr();
  for (int i = 0; i < rows; ++i) {
    const T* xr = xp + static_cast<int64_t>(i) * d;
    T* orow = op + static_cast<int64_t>(i) * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) {
      T c = xr[j] - mu;
      var += c * c;
    }
    var /= d;
    T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*mean)[i] = mu;
    (*inv_std)[i] = is;
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * is * gp[j] + bp[j];
  }
  const int rr = rows, dd = d;
  record<T>(out, "layer_norm", {x, gain, bias}, [rr, dd, mean, inv_std](Node<T>& nd) {
    auto& px = nd.parents[0];
    auto& pg = nd.parents[1];
    auto& pb = nd.parents[2];
    const T* xp = px.ptr();
    const T* gp = pg.ptr();
    const T* g = nd.out_grad->data();
    std::vector<T> dg(dd, T(0)), db(dd, T(0));
    std::vector<T> dx;
    if (px.requires_grad) dx.assign(static_cast<size_t>(rr) * dd, T(0));
    for (int i = 0; i < rr; ++i) {
      const T* xr = xp + static_cast<int64_t>(i) * dd;
      const T* gr = g + static_cast<int64_t>(i) * dd;
      T mu = (*mean)[i], is = (*inv_std)[i];
      T m1 = 0, m2 = 0;
      for (int j = 0; j < dd; ++j) {
        T xhat = (xr[j] - mu) * is;
        T dxh = gr[j] * gp[j];
        m1 += dxh;
        m2 += dxh * xhat;
        dg[j] += gr[j] * xhat;
        db[j] += gr[j];
      }
      m1 /= dd;
      m2 /= dd;
      if (px.requires_grad) {
        T* dxr = dx.data() + static_cast<int64_t>(i) * dd;
        for (int j = 0; j < dd; ++j) {
          T xhat = (xr[j] - mu) * is;
          T dxh = gr[j] * gp[j];
          dxr[j] = is * (dxh - m1 - xhat * m2);
        }
      }
    }
    if (px.requires_grad) accumulate_grad(px, dx.data(), static_cast<int64_t>(rr) * dd, "layer_norm");
    accumulate_grad(pg, dg.data(), dd, "layer_norm");
    accumulate_grad(pb, db.data(), dd, "layer_norm");
  });
  return out;
}

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.shape.empty()) throw ShapeError("softmax: scalar input");
  const int c = x.shape.back();
  const int rows = static_cast<int>(x.numel() / c);
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (int i = 0; i < rows; ++i) {
    const T* xr = x.ptr() + static_cast<int64_t>(i) * c;
    T* orow = out.ptr() + static_cast<int64_t>(i) * c;
    T mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      s += orow[j];
    }
    T inv = T(1) / s;
    for (int j = 0; j < c; ++j) orow[j] *= inv;
  }
  record<T>(out, "softmax", {x}, [rows, c](Node<T>& nd) {
    if (!nd.parents[0].requires_grad) return;
    const T* y = nd.out_data->data();
    const T* g = nd.out_grad->data();
    std::vector<T> dx(static_cast<size_t>(rows) * c);
    for (int i = 0; i < rows; ++i) {
      const T* yr = y + static_cast<int64_t>(i) * c;
      const T* gr = g + static_cast<int64_t>(i) * c;
      T dot = 0;
      for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
      T* dxr = dx.data() + static_cast<int64_t>(i) * c;
      for (int j = 0; j < c; ++j) dxr[j] = yr[j] * (gr[j] - dot);
    }
    accumulate_grad(nd.parents[0], dx.data(), static_cast<int64_t>(rows) * c, "softmax");
  });
  return out;
}

// ---------------------------------------------------------------------------
// embedding / positions

template <class T>
Tensor<T> embedding(const std::vector<int>& ids, const Tensor<T>& table) {
  if (table.shape.size() != 2) throw ShapeError("embedding: table must be rank-2, got " + shape_str(table.shape));
  const int v = table.shape[0], d = table.shape[1];
  const int n = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v)
      throw UsageError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(v));
  Tensor<T> out = Tensor<T>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    std::copy_n(table.ptr() + static_cast<int64_t>(ids[i]) * d, d, out.ptr() + static_cast<int64_t>(i) * d);
  record<T>(out, "embedding", {table}, [ids, n, d](Node<T>& nd) {
    auto& pt = nd.parents[0];
    if (!pt.requires_grad) return;
    pt.ensure_grad();
    const T* g = nd.out_grad->data();
    T* tg = pt.gptr();
    for (int i = 0; i < n; ++i) {
      T* row = tg + static_cast<int64_t>(ids[i]) * d;
      const T* gr = g + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) row[j] += gr[j];
    }
    if (finite_checks_flag()) check_finite(*pt.grad, "embedding", "gradient");
  });
  return out;
}

// out[b,s,:] = x[b,s,:] + pos[s,:]
template <class T>
Tensor<T> add_pos(const Tensor<T>& x, const Tensor<T>& pos) {
  if (x.shape.size() != 3 || pos.shape.size() != 2 || pos.shape[1] != x.shape[2])
    throw ShapeError("add_pos: x " + shape_str(x.shape) + " vs pos " + shape_str(pos.shape));
  const int b = x.shape[0], s = x.shape[1], d = x.shape[2];
  if (s > pos.shape[0])
    throw ShapeError("add_pos: sequence length " + std::to_string(s) + " exceeds position table " +
                     std::to_string(pos.shape[0]));
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (int bi = 0; bi < b; ++bi)
    for (int si = 0; si < s; ++si) {
      const T* xr = x.ptr() + (static_cast<int64_t>(bi) * s + si) * d;
      const T* pr = pos.ptr() + static_cast<int64_t>(si) * d;
      T* orow = out.ptr() + (static_cast<int64_t>(bi) * s + si) * d;
      for (int j = 0; j < d; ++j) orow[j] = xr[j] + pr[j];
    }
  record<T>(out, "add_pos", {x, pos}, [b, s, d](Node<T>& nd) {
    const T* g = nd.out_grad->data();
    if (nd.parents[0].requires_grad)
      accumulate_grad(nd.parents[0], g, static_cast<int64_t>(b) * s * d, "add_pos");
    auto& pp = nd.parents[1];
    if (pp.requires_grad) {
      std::vector<T> dp(static_cast<size_t>(pp.shape[0]) * d, T(0));
      for (int bi = 0; bi < b; ++bi)
        for (int si = 0; si < s; ++si) {
          const T* gr = g + (static_cast<int64_t>(bi) * s + si) * d;
          T* pr = dp.data() + static_cast<int64_t>(si) * d;
          for (int j = 0; j < d; ++j) pr[j] += gr[j];
        }
      accumulate_grad(pp, dp.data(), static_cast<int64_t>(pp.shape[0]) * d, "add_pos");
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// attention

// Batched multi-head scaled dot-product attention over [B,S,D] tensors.
// key_valid (flat [B*S], empty = all valid) masks padded key positions;
// causal additionally restricts each query to keys at or before it.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads,
                    bool causal, const std::vector<char>& key_valid = {}) {
  if (q.shape.size() != 3 || q.shape != k.shape || q.shape != v.shape)
    throw ShapeError("attention: q/k/v must share a rank-3 shape, got " + shape_str(q.shape) + " " +
                     shape_str(k.shape) + " " + shape_str(v.shape));
  const int b = q.shape[0], s = q.shape[1], d = q.shape[2];
  if (n_heads <= 0 || d % n_heads != 0)
    throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by heads " + std::to_string(n_heads));
  if (!key_valid.empty() && static_cast<int>(key_valid.size()) != b * s)
    throw ShapeError("attention: key_valid size " + std::to_string(key_valid.size()) + " vs B*S " +
                     std::to_string(b * s));
  const int dh = d / n_heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T neg = static_cast<T>(-1e30);

  Tensor<T> out = Tensor<T>::zeros(q.shape);
  // attention probabilities, saved for backward: [B, H, S, S]
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(b) * n_heads * s * s);

  for (int bi = 0; bi < b; ++bi) {
    for (int h = 0; h < n_heads; ++h) {
      const int64_t base = static_cast<int64_t>(bi) * s * d + static_cast<int64_t>(h) * dh;
      CStridedMap<T> qm(q.ptr() + base, s, dh, Eigen::OuterStride<>(d));
      CStridedMap<T> km(k.ptr() + base, s, dh, Eigen::OuterStride<>(d));
      CStridedMap<T> vm(v.ptr() + base, s, dh, Eigen::OuterStride<>(d));
      T* pp = probs->data() + (static_cast<int64_t>(bi) * n_heads + h) * s * s;
      Map<T> pm(pp, s, s);
      pm.noalias() = sc * (qm * km.transpose());
      for (int i = 0; i < s; ++i) {
        T* row = pp + static_cast<int64_t>(i) * s;
        for (int j = 0; j < s; ++j) {
          bool masked = (causal && j > i) || (!key_valid.empty() && !key_valid[bi * s + j]);
          if (masked) row[j] = neg;
        }
        // stable softmax in place
        T mx = row[0];
        for (int j = 1; j < s; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < s; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < s; ++j) row[j] *= inv;
      }
      StridedMap<T> om(out.ptr() + base, s, dh, Eigen::OuterStride<>(d));
      om.noalias() = pm * vm;
    }
  }

  record<T>(out, "attention", {q, k, v}, [b, s, d, n_heads, dh, sc, probs](Node<T>& nd) {
    auto& pq = nd.parents[0];
    auto& pk = nd.parents[1];
    auto& pv = nd.parents[2];
    if (pq.requires_grad) pq.ensure_grad();
    if (pk.requires_grad) pk.ensure_grad();
    if (pv.requires_grad) pv.ensure_grad();
    for (int bi = 0; bi < b; ++bi) {
      for (int h = 0; h < n_heads; ++h) {
        const int64_t base = static_cast<int64_t>(bi) * s * d + static_cast<int64_t>(h) * dh;
        CStridedMap<T> qm(pq.ptr() + base, s, dh, Eigen::OuterStride<>(d));
        CStridedMap<T> km(pk.ptr() + base, s, dh, Eigen::OuterStride<>(d));
        CStridedMap<T> vm(pv.ptr() + base, s, dh, Eigen::OuterStride<>(d));
        CStridedMap<T> gom(nd.out_grad->data() + base, s, dh, Eigen::OuterStride<>(d));
        CMap<T> pm(probs->data() + (static_cast<int64_t>(bi) * n_heads + h) * s * s, s, s);
        EMat<T> dp = gom * vm.transpose();                      // [S,S]
        if (pv.requires_grad) {
          StridedMap<T> gvm(pv.gptr() + base, s, dh, Eigen::OuterStride<>(d));
          gvm.noalias() += pm.transpose() * gom;
        }
        // softmax backward: dA = P .* (dP - rowsum(dP .* P))
        EMat<T> da = pm.cwiseProduct(dp);
        Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = da.rowwise().sum();
        da = pm.cwiseProduct(dp.colwise() - rowdot);
        if (pq.requires_grad) {
          StridedMap<T> gqm(pq.gptr() + base, s, dh, Eigen::OuterStride<>(d));
          gqm.noalias() += sc * (da * km);
        }
        if (pk.requires_grad) {
          StridedMap<T> gkm(pk.gptr() + base, s, dh, Eigen::OuterStride<>(d));
          gkm.noalias() += sc * (da.transpose() * qm);
        }
      }
    }
    if (finite_checks_flag()) {
      if (pq.requires_grad) check_finite(*pq.grad, "attention", "gradient");
      if (pk.requires_grad) check_finite(*pk.grad, "attention", "gradient");
      if (pv.requires_grad) check_finite(*pv.grad, "attention", "gradient");
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// dropout

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) return x;
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<T>>(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (int64_t i = 0; i < n; ++i) (*mask)[i] = (rng.uniform() < p) ? T(0) : keep_scale;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * (*mask)[i];
  record<T>(out, "dropout", {x}, [n, mask](Node<T>& nd) {
    if (!nd.parents[0].requires_grad) return;
    std::vector<T> gx(n);
    for (int64_t i = 0; i < n; ++i) gx[i] = (*nd.out_grad)[i] * (*mask)[i];
    accumulate_grad(nd.parents[0], gx.data(), n, "dropout");
  });
  return out;
}

// ---------------------------------------------------------------------------
// losses / reductions

// Weighted token-level cross entropy over [N, V] logits. Rows with weight 0
// are ignored entirely (their targets may be any valid id).
template <class T>
Tensor<T> cross_entropy_masked(const Tensor<T>& logits, const std::vector<int>& targets,
                               const std::vector<T>& weights) {
  if (logits.shape.size() != 2)
    throw ShapeError("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape));
  const int n = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(weights.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(weights.size()) + " weights for " + std::to_string(n) + " rows");
  T wsum = 0;
  for (T w : weights) wsum += w;
  if (!(wsum > 0)) throw UsageError("cross_entropy: total weight is zero");
  for (int i = 0; i < n; ++i)
    if (weights[i] != T(0) && (targets[i] < 0 || targets[i] >= v))
      throw UsageError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocab " + std::to_string(v));

  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * v);
  T loss = 0;
  for (int i = 0; i < n; ++i) {
    const T* zr = logits.ptr() + static_cast<int64_t>(i) * v;
    T* pr = probs->data() + static_cast<int64_t>(i) * v;
    T mx = zr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
    T sum = 0;
    for (int j = 0; j < v; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      sum += pr[j];
    }
    T inv = T(1) / sum;
    for (int j = 0; j < v; ++j) pr[j] *= inv;
    if (weights[i] != T(0)) {
      T lse = std::log(sum) + mx;
      loss += weights[i] * (lse - zr[targets[i]]);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(loss / wsum);
  record<T>(out, "cross_entropy", {logits}, [n, v, targets, weights, wsum, probs](Node<T>& nd) {
    auto& pl = nd.parents[0];
    if (!pl.requires_grad) return;
    const T g = (*nd.out_grad)[0];
    std::vector<T> dz(static_cast<size_t>(n) * v, T(0));
    for (int i = 0; i < n; ++i) {
      if (weights[i] == T(0)) continue;
      const T* pr = probs->data() + static_cast<int64_t>(i) * v;
      T* dr = dz.data() + static_cast<int64_t>(i) * v;
      const T c = g * weights[i] / wsum;
      for (int j = 0; j < v; ++j) dr[j] = c * pr[j];
      dr[targets[i]] -= c;
    }
    accumulate_grad(pl, dz.data(), static_cast<int64_t>(n) * v, "cross_entropy");
  });
  return out;
}

// Row-weighted mean squared error against a constant target. loss =
// sum_i w_i * ||pred_i - tgt_i||^2 / (D * sum_i w_i).
template <class T>
Tensor<T> mse_masked(const Tensor<T>& pred, const std::vector<T>& target, const std::vector<T>& row_weights) {
  auto [rows, d] = detail::as_2d(pred, "mse");
  if (static_cast<int64_t>(target.size()) != pred.numel())
    throw ShapeError("mse: target size " + std::to_string(target.size()) + " vs pred " + shape_str(pred.shape));
  if (static_cast<int>(row_weights.size()) != rows)
    throw ShapeError("mse: " + std::to_string(row_weights.size()) + " row weights for " + std::to_string(rows) +
                     " rows");
  T wsum = 0;
  for (T w : row_weights) wsum += w;
  if (!(wsum > 0)) throw UsageError("mse: total weight is zero");
  const T denom = static_cast<T>(d) * wsum;
  T loss = 0;
  for (int i = 0; i < rows; ++i) {
    if (row_weights[i] == T(0)) continue;
    const T* pr = pred.ptr() + static_cast<int64_t>(i) * d;
    const T* tr = target.data() + static_cast<int64_t>(i) * d;
    T s = 0;
    for (int j = 0; j < d; ++j) {
      T c = pr[j] - tr[j];
      s += c * c;
    }
    loss += row_weights[i] * s;
  }
  Tensor<T> out = Tensor<T>::scalar(loss / denom);
  const int rr = rows, dd = d;
  record<T>(out, "mse", {pred}, [rr, dd, target, row_weights, denom](Node<T>& nd) {
    auto& pp = nd.parents[0];
    if (!pp.requires_grad) return;
    const T g = (*nd.out_grad)[0];
    std::vector<T> dp(static_cast<size_t>(rr) * dd, T(0));
    for (int i = 0; i < rr; ++i) {
      if (row_weights[i] == T(0)) continue;
      const T* pr = pp.ptr() + static_cast<int64_t>(i) * dd;
      const T* tr = target.data() + static_cast<int64_t>(i) * dd;
      T* dr = dp.data() + static_cast<int64_t>(i) * dd;
      const T c = g * T(2) * row_weights[i] / denom;
      for (int j = 0; j < dd; ++j) dr[j] = c * (pr[j] - tr[j]);
    }
    accumulate_grad(pp, dp.data(), static_cast<int64_t>(rr) * dd, "mse");
  });
  return out;
}

template <class T>
Tensor<T> mse(const Tensor<T>& pred, const std::vector<T>& target) {
  auto [rows, d] = detail::as_2d(pred, "mse");
  (void)d;
  return mse_masked(pred, target, std::vector<T>(rows, T(1)));
}

// Mean over valid rows of a [B,S,D] tensor -> [B,D]. Every batch element must
// have at least one valid row.
template <class T>
Tensor<T> mean_rows_masked(const Tensor<T>& x, const std::vector<char>& valid) {
  if (x.shape.size() != 3) throw ShapeError("mean_rows: expects rank-3 input, got " + shape_str(x.shape));
  const int b = x.shape[0], s = x.shape[1], d = x.shape[2];
  if (static_cast<int>(valid.size()) != b * s)
    throw ShapeError("mean_rows: mask size " + std::to_string(valid.size()) + " vs B*S " + std::to_string(b * s));
  std::vector<int> counts(b, 0);
  for (int bi = 0; bi < b; ++bi) {
    for (int si = 0; si < s; ++si) counts[bi] += valid[bi * s + si] ? 1 : 0;
    if (counts[bi] == 0) throw UsageError("mean_rows: batch element " + std::to_string(bi) + " has no valid rows");
  }
  Tensor<T> out = Tensor<T>::zeros({b, d});
  for (int bi = 0; bi < b; ++bi) {
    T* orow = out.ptr() + static_cast<int64_t>(bi) * d;
    for (int si = 0; si < s; ++si) {
      if (!valid[bi * s + si]) continue;
      const T* xr = x.ptr() + (static_cast<int64_t>(bi) * s + si) * d;
      for (int j = 0; j < d; ++j) orow[j] += xr[j];
    }
    const T inv = T(1) / static_cast<T>(counts[bi]);
    for (int j = 0; j < d; ++j) orow[j] *= inv;
  }
  record<T>(out, "mean_rows", {x}, [b, s, d, valid, counts](Node<T>& nd) {
    auto& px = nd.parents[0];
    if (!px.requires_grad) return;
    const T* g = nd.out_grad->data();
    std::vector<T> dx(static_cast<size_t>(b) * s * d, T(0));
    for (int bi = 0; bi < b; ++bi) {
      const T inv = T(1) / static_cast<T>(counts[bi]);
      const T* gr = g + static_cast<int64_t>(bi) * d;
      for (int si = 0; si < s; ++si) {
        if (!valid[bi * s + si]) continue;
        T* dr = dx.data() + (static_cast<int64_t>(bi) * s + si) * d;
        for (int j = 0; j < d; ++j) dr[j] = gr[j] * inv;
      }
    }
    accumulate_grad(px, dx.data(), static_cast<int64_t>(b) * s * d, "mean_rows");
  });
  return out;
}

// ---------------------------------------------------------------------------
// row injection (splicing computed embeddings into a base sequence)

template <class T>
struct RowInjection {
  int batch = 0;
  int start = 0;
  Tensor<T> src;  // [rows, D]
};

// Returns a copy of base [B,S,D] with each injection's rows replacing
// base rows [start, start+rows) of its batch element. Gradients flow to the
// injected sources at their positions and to base everywhere else.
template <class T>
Tensor<T> inject_rows(const Tensor<T>& base, const std::vector<RowInjection<T>>& injections) {
  if (base.shape.size() != 3) throw ShapeError("inject_rows: base must be rank-3, got " + shape_str(base.shape));
  const int b = base.shape[0], s = base.shape[1], d = base.shape[2];
  Tensor<T> out = Tensor<T>::zeros(base.shape);
  std::copy(base.ptr(), base.ptr() + base.numel(), out.ptr());
  // owner[b*s + row] = index of the injection that wrote the row, -1 = base
  auto owner = std::make_shared<std::vector<int>>(static_cast<size_t>(b) * s, -1);
  for (size_t idx = 0; idx < injections.size(); ++idx) {
    const auto& inj = injections[idx];
    if (inj.src.shape.size() != 2 || inj.src.shape[1] != d)
      throw ShapeError("inject_rows: source must be [rows," + std::to_string(d) + "], got " +
                       shape_str(inj.src.shape));
    const int rows = inj.src.shape[0];
    if (inj.batch < 0 || inj.batch >= b || inj.start < 0 || inj.start + rows > s)
      throw ShapeError("inject_rows: rows [" + std::to_string(inj.start) + "," +
                       std::to_string(inj.start + rows) + ") outside sequence of " + std::to_string(s));
    std::copy_n(inj.src.ptr(), static_cast<int64_t>(rows) * d,
                out.ptr() + (static_cast<int64_t>(inj.batch) * s + inj.start) * d);
    for (int r = 0; r < rows; ++r) (*owner)[inj.batch * s + inj.start + r] = static_cast<int>(idx);
  }
  std::vector<Tensor<T>> parents = {base};
  for (const auto& inj : injections) parents.push_back(inj.src);
  std::vector<std::pair<int, int>> spans;  // (batch*s + start) row offset per injection
  spans.reserve(injections.size());
  for (const auto& inj : injections) spans.push_back({inj.batch, inj.start});
  record<T>(out, "inject_rows", std::move(parents), [b, s, d, owner, spans](Node<T>& nd) {
    const T* g = nd.out_grad->data();
    auto& pbase = nd.parents[0];
    if (pbase.requires_grad) {
      std::vector<T> dbase(static_cast<size_t>(b) * s * d, T(0));
      for (int row = 0; row < b * s; ++row)
        if ((*owner)[row] < 0)
          std::copy_n(g + static_cast<int64_t>(row) * d, d, dbase.data() + static_cast<int64_t>(row) * d);
      accumulate_grad(pbase, dbase.data(), static_cast<int64_t>(b) * s * d, "inject_rows");
    }
    for (size_t idx = 0; idx < spans.size(); ++idx) {
      auto& psrc = nd.parents[idx + 1];
      if (!psrc.requires_grad) continue;
      const int rows = psrc.shape[0];
      std::vector<T> dsrc(static_cast<size_t>(rows) * d, T(0));
      for (int r = 0; r < rows; ++r) {
        const int row = spans[idx].first * s + spans[idx].second + r;
        if ((*owner)[row] == static_cast<int>(idx))
          std::copy_n(g + static_cast<int64_t>(row) * d, d, dsrc.data() + static_cast<int64_t>(r) * d);
      }
      accumulate_grad(psrc, dsrc.data(), static_cast<int64_t>(rows) * d, "inject_rows");
    }
  });
  return out;
}

// Reshape to a new shape with the same element count. Recorded as a copy so
// gradient bookkeeping stays correct even if both views are used downstream.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, const std::vector<int>& shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape) + " to " + shape_str(shape));
  Tensor<T> out = Tensor<T>::zeros(shape);
  std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
  const int64_t n = x.numel();
  record<T>(out, "reshape", {x}, [n](Node<T>& nd) {
    accumulate_grad(nd.parents[0], nd.out_grad->data(), n, "reshape");
  });
  return out;
}

}  // namespace dfallm::nn
