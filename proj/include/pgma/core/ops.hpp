// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward operators and their vector-Jacobian products. Every operator takes
// and returns Var handles on the same Graph; the backward closure reads the
// output gradient from the node itself and accumulates into its parents.
//
// Layout conventions: matrices are row-major rank-2; feature maps are
// (H, W, C) with channels innermost.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pgma/core/graph.hpp"
#include "pgma/core/tensor.hpp"

namespace pgma {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
CMatMap<T> cmat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MatMap<T> mat(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) throw ShapeError(op, s, Shape(rank, 0), "expected rank " + std::to_string(rank));
}

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(op, a, b);
}

// (outer, n, inner) decomposition of a shape around an axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError(op, s, Shape{axis}, "axis out of range");
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Elementwise unary op: dfn(x, y) returns dy/dx.
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F fn, DF dfn) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
  return a.graph->record(std::move(y), {a}, [a, dfn](Graph<T>& g, std::size_t self) {
    const auto& node = g.node(self);
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      const Tensor<T>& x = g.value(a);
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += node.grad[i] * dfn(x[i], node.value[i]);
    });
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra and shape manipulation

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  using namespace detail;
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  require_rank("matmul", A.shape(), 2);
  require_rank("matmul", B.shape(), 2);
  const std::size_t m = trans_a ? A.dim(1) : A.dim(0);
  const std::size_t k = trans_a ? A.dim(0) : A.dim(1);
  const std::size_t kb = trans_b ? B.dim(1) : B.dim(0);
  const std::size_t n = trans_b ? B.dim(0) : B.dim(1);
  if (k != kb) throw ShapeError("matmul", A.shape(), B.shape(), "inner dimensions differ");

  Tensor<T> C(Shape{m, n});
  auto Am = cmat(A, A.dim(0), A.dim(1));
  auto Bm = cmat(B, B.dim(0), B.dim(1));
  auto Cm = mat(C, m, n);
  if (!trans_a && !trans_b) Cm.noalias() = Am * Bm;
  else if (trans_a && !trans_b) Cm.noalias() = Am.transpose() * Bm;
  else if (!trans_a && trans_b) Cm.noalias() = Am * Bm.transpose();
  else Cm.noalias() = Am.transpose() * Bm.transpose();

  return a.graph->record(std::move(C), {a, b}, [a, b, trans_a, trans_b, m, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    auto Gm = cmat(G, m, n);
    const Tensor<T>& A = g.value(a);
    const Tensor<T>& B = g.value(b);
    auto Am = cmat(A, A.dim(0), A.dim(1));
    auto Bm = cmat(B, B.dim(0), B.dim(1));
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      auto dA = mat(ga, A.dim(0), A.dim(1));
      if (!trans_a && !trans_b) dA.noalias() += Gm * Bm.transpose();
      else if (trans_a && !trans_b) dA.noalias() += Bm * Gm.transpose();
      else if (!trans_a && trans_b) dA.noalias() += Gm * Bm;
      else dA.noalias() += Bm.transpose() * Gm.transpose();
    });
    g.accumulate(b.id, [&](Tensor<T>& gb) {
      auto dB = mat(gb, B.dim(0), B.dim(1));
      if (!trans_a && !trans_b) dB.noalias() += Am.transpose() * Gm;
      else if (trans_a && !trans_b) dB.noalias() += Am * Gm;
      else if (!trans_a && trans_b) dB.noalias() += Gm.transpose() * Am;
      else dB.noalias() += Gm.transpose() * Am.transpose();
    });
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  using namespace detail;
  const Tensor<T>& A = a.value();
  require_rank("transpose", A.shape(), 2);
  const std::size_t r = A.dim(0), c = A.dim(1);
  Tensor<T> out(Shape{c, r});
  mat(out, c, r) = cmat(A, r, c).transpose();
  return a.graph->record(std::move(out), {a}, [a, r, c](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) { mat(ga, r, c) += cmat(G, c, r).transpose(); });
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.graph->record(std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
    });
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  using namespace detail;
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat", s0, Shape{axis}, "axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) throw ShapeError("concat", s0, s);
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis("concat", out_shape, axis);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Tensor<T>& v = p.value();
    const std::size_t len = v.dim(axis) * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(v.ptr() + o * len, len, out.ptr() + o * os.n * os.inner + off * os.inner);
    }
    off += v.dim(axis);
  }
  return parts[0].graph->record(std::move(out), parts, [parts, offsets, os, axis](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t len = g.value(parts[pi]).dim(axis) * os.inner;
      g.accumulate(parts[pi].id, [&](Tensor<T>& gp) {
        for (std::size_t o = 0; o < os.outer; ++o) {
          const T* src = G.ptr() + o * os.n * os.inner + offsets[pi] * os.inner;
          T* dst = gp.ptr() + o * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      });
    }
  });
}

// Contiguous range [start, start+len) along an axis.
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t len) {
  using namespace detail;
  const Tensor<T>& A = a.value();
  const AxisSplit s = split_axis("slice", A.shape(), axis);
  if (start + len > s.n) throw ShapeError("slice", A.shape(), Shape{start, len}, "range exceeds axis");
  Shape out_shape = A.shape();
  out_shape[axis] = len;
  Tensor<T> out(out_shape);
  const std::size_t chunk = len * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(A.ptr() + (o * s.n + start) * s.inner, chunk, out.ptr() + o * chunk);
  }
  return a.graph->record(std::move(out), {a}, [a, s, start, chunk](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = ga.ptr() + (o * s.n + start) * s.inner;
        const T* src = G.ptr() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same("add", a.shape(), b.shape());
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i]; });
    g.accumulate(b.id, [&](Tensor<T>& gb) { for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i]; });
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same("sub", a.shape(), b.shape());
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i]; });
    g.accumulate(b.id, [&](Tensor<T>& gb) { for (std::size_t i = 0; i < G.size(); ++i) gb[i] -= G[i]; });
  });
}

// Hadamard product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same("mul", a.shape(), b.shape());
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    const Tensor<T>& A = g.value(a);
    const Tensor<T>& B = g.value(b);
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i]; });
    g.accumulate(b.id, [&](Tensor<T>& gb) { for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i]; });
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::require_same("div", a.shape(), b.shape());
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] / B[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& node = g.node(self);
    const Tensor<T>& B = g.value(b);
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < B.size(); ++i) ga[i] += node.grad[i] / B[i];
    });
    g.accumulate(b.id, [&](Tensor<T>& gb) {
      for (std::size_t i = 0; i < B.size(); ++i) gb[i] -= node.grad[i] * node.value[i] / B[i];
    });
  });
}

// Elementwise maximum; ties route the gradient to the first operand.
template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  detail::require_same("maximum", a.shape(), b.shape());
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::max(A[i], B[i]);
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    const Tensor<T>& A = g.value(a);
    const Tensor<T>& B = g.value(b);
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < G.size(); ++i) if (A[i] >= B[i]) ga[i] += G[i]; });
    g.accumulate(b.id, [&](Tensor<T>& gb) { for (std::size_t i = 0; i < G.size(); ++i) if (A[i] < B[i]) gb[i] += G[i]; });
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

// a (..., n) + bias (n), broadcast over leading axes.
template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  const Tensor<T>& A = a.value();
  const Tensor<T>& b = bias.value();
  if (A.rank() == 0 || b.rank() != 1 || A.shape().back() != b.dim(0)) {
    throw ShapeError("add_bias", A.shape(), b.shape());
  }
  const std::size_t n = b.dim(0);
  const std::size_t rows = A.size() / n;
  Tensor<T> out(A.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = A[r * n + j] + b[j];
  return a.graph->record(std::move(out), {a, bias}, [a, bias, rows, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i]; });
    g.accumulate(bias.id, [&](Tensor<T>& gb) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[r * n + j];
    });
  });
}

// Row i of a (m x n) multiplied by v[i].
template <typename T>
Var<T> scale_rows(Var<T> a, Var<T> v) {
  const Tensor<T>& A = a.value();
  const Tensor<T>& V = v.value();
  detail::require_rank("scale_rows", A.shape(), 2);
  if (V.size() != A.dim(0)) throw ShapeError("scale_rows", A.shape(), V.shape());
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * V[i];
  return a.graph->record(std::move(out), {a, v}, [a, v, m, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    const Tensor<T>& A = g.value(a);
    const Tensor<T>& V = g.value(v);
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += G[i * n + j] * V[i];
    });
    g.accumulate(v.id, [&](Tensor<T>& gv) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[i] += G[i * n + j] * A[i * n + j];
    });
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); },
                       [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

// Clamp into [lo, hi]; the gradient passes only where the input is inside.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return detail::unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                       [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

template <typename T>
Var<T> sum_all(Var<T> a) {
  const Tensor<T>& A = a.value();
  T s = 0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  return a.graph->record(Tensor<T>::scalar(s), {a}, [a](Graph<T>& g, std::size_t self) {
    const T G = g.node(self).grad[0];
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (auto& v : ga.data()) v += G; });
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean_all", a.shape(), Shape{1}, "empty input");
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// Max over one axis; the axis is removed from the output shape.
template <typename T>
Var<T> max_along(Var<T> a, std::size_t axis) {
  using namespace detail;
  const Tensor<T>& A = a.value();
  const AxisSplit s = split_axis("max_along", A.shape(), axis);
  if (s.n == 0) throw ShapeError("max_along", A.shape(), Shape{axis}, "empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < A.rank(); ++i) if (i != axis) out_shape.push_back(A.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      T bv = A[(o * s.n) * s.inner + in];
      for (std::size_t k = 1; k < s.n; ++k) {
        const T v = A[(o * s.n + k) * s.inner + in];
        if (v > bv) { bv = v; best = k; }
      }
      out[o * s.inner + in] = bv;
      arg[o * s.inner + in] = (o * s.n + best) * s.inner + in;
    }
  }
  return a.graph->record(std::move(out), {a}, [a, arg](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) { for (std::size_t i = 0; i < arg.size(); ++i) ga[arg[i]] += G[i]; });
  });
}

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  using namespace detail;
  const Tensor<T>& A = a.value();
  const AxisSplit s = split_axis("softmax", A.shape(), axis);
  Tensor<T> out(A.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, A[base + k * s.inner]);
      T z = 0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const T e = std::exp(A[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] *= inv;
    }
  }
  return a.graph->record(std::move(out), {a}, [a, s](Graph<T>& g, std::size_t self) {
    const auto& node = g.node(self);
    const Tensor<T>& Y = node.value;
    const Tensor<T>& G = node.grad;
    g.accumulate(a.id, [&](Tensor<T>& ga) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          T dot = 0;
          for (std::size_t k = 0; k < s.n; ++k) dot += G[base + k * s.inner] * Y[base + k * s.inner];
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t i = base + k * s.inner;
            ga[i] += Y[i] * (G[i] - dot);
          }
        }
      }
    });
  });
}

// Normalizes over the last axis, then applies gamma/beta (both shaped (n)).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const Tensor<T>& X = x.value();
  if (X.rank() == 0) throw ShapeError("layer_norm", X.shape(), Shape{});
  const std::size_t n = X.shape().back();
  if (gamma.value().shape() != Shape{n} || beta.value().shape() != Shape{n}) {
    throw ShapeError("layer_norm", X.shape(), gamma.value().shape(), "affine width");
  }
  const std::size_t rows = X.size() / n;
  const Tensor<T>& Gm = gamma.value();
  const Tensor<T>& Bt = beta.value();
  Tensor<T> xhat(X.shape());
  std::vector<T> rstd(rows);
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X.ptr() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * rs;
      xhat[r * n + j] = h;
      out[r * n + j] = h * Gm[j] + Bt[j];
    }
  }
  return x.graph->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, n](Graph<T>& g, std::size_t self) {
        const Tensor<T>& G = g.node(self).grad;
        const Tensor<T>& Gm = g.value(gamma);
        g.accumulate(x.id, [&](Tensor<T>& gx) {
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = G[r * n + j] * Gm[j];
              m1 += dh;
              m2 += dh * xhat[r * n + j];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = G[r * n + j] * Gm[j];
              gx[r * n + j] += rstd[r] * (dh - m1 - xhat[r * n + j] * m2);
            }
          }
        });
        g.accumulate(gamma.id, [&](Tensor<T>& gg) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += G[r * n + j] * xhat[r * n + j];
        });
        g.accumulate(beta.id, [&](Tensor<T>& gb) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += G[r * n + j];
        });
      });
}

// (x - min) / (max - min + eps) over the whole tensor.
template <typename T>
Var<T> minmax_normalize(Var<T> x, T eps = T(1e-8)) {
  const Tensor<T>& X = x.value();
  if (X.empty()) throw ShapeError("minmax_normalize", X.shape(), Shape{1}, "empty input");
  std::size_t imin = 0, imax = 0;
  for (std::size_t i = 1; i < X.size(); ++i) {
    if (X[i] < X[imin]) imin = i;
    if (X[i] > X[imax]) imax = i;
  }
  const T mn = X[imin];
  const T denom = X[imax] - mn + eps;
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = (X[i] - mn) / denom;
  return x.graph->record(std::move(out), {x}, [x, imin, imax, mn, denom](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    const Tensor<T>& X = g.value(x);
    g.accumulate(x.id, [&](Tensor<T>& gx) {
      T d_max = 0, d_min = 0;
      const T inv = T(1) / denom;
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T r = (X[i] - mn) * inv * inv;
        gx[i] += G[i] * inv;
        d_max -= G[i] * r;
        d_min += G[i] * (r - inv);
      }
      gx[imax] += d_max;
      gx[imin] += d_min;
    });
  });
}

// ---------------------------------------------------------------------------
// Spatial operators on (H, W, C) maps

// Stride-1 convolution with zero padding that preserves the spatial size.
// weight is (k*k*Cin, Cout) with rows ordered (ky, kx, cin); k is 1 or 3.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t k) {
  using namespace detail;
  const Tensor<T>& X = x.value();
  const Tensor<T>& W = weight.value();
  require_rank("conv2d", X.shape(), 3);
  require_rank("conv2d", W.shape(), 2);
  if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel must be 1 or 3");
  const std::size_t H = X.dim(0), Wd = X.dim(1), C = X.dim(2);
  if (W.dim(0) != k * k * C) throw ShapeError("conv2d", X.shape(), W.shape(), "weight rows != k*k*Cin");
  const std::size_t Co = W.dim(1);
  if (bias.value().shape() != Shape{Co}) throw ShapeError("conv2d", W.shape(), bias.value().shape(), "bias");
  const std::size_t P = H * Wd;
  const std::size_t K = k * k * C;

  Tensor<T> cols;
  if (k == 1) {
    cols = X.reshaped(Shape{P, C});
  } else {
    cols = Tensor<T>(Shape{P, K});
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < Wd; ++xx) {
        T* dst = cols.ptr() + (y * Wd + xx) * K;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, dst += C) {
            const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
            if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(Wd)) continue;
            std::copy_n(X.ptr() + (sy * Wd + sx) * C, C, dst);
          }
        }
      }
    }
  }
  Tensor<T> out(Shape{H, Wd, Co});
  auto Om = mat(out, P, Co);
  Om.noalias() = cmat(cols, P, K) * cmat(W, K, Co);
  const Tensor<T>& B = bias.value();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < Co; ++c) out[p * Co + c] += B[c];

  return x.graph->record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, cols = std::move(cols), H, Wd, C, Co, P, K, k](Graph<T>& g, std::size_t self) {
        const Tensor<T>& G = g.node(self).grad;
        auto Gm = cmat(G, P, Co);
        g.accumulate(weight.id, [&](Tensor<T>& gw) { mat(gw, K, Co).noalias() += cmat(cols, P, K).transpose() * Gm; });
        g.accumulate(bias.id, [&](Tensor<T>& gb) {
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t c = 0; c < Co; ++c) gb[c] += G[p * Co + c];
        });
        g.accumulate(x.id, [&](Tensor<T>& gx) {
          const Tensor<T>& W = g.value(weight);
          if (k == 1) {
            mat(gx, P, C).noalias() += Gm * cmat(W, K, Co).transpose();
            return;
          }
          Tensor<T> dcols(Shape{P, K});
          mat(dcols, P, K).noalias() = Gm * cmat(W, K, Co).transpose();
          for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xx = 0; xx < Wd; ++xx) {
              const T* src = dcols.ptr() + (y * Wd + xx) * K;
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, src += C) {
                  const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
                  if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(Wd)) continue;
                  T* dst = gx.ptr() + (sy * Wd + sx) * C;
                  for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                }
              }
            }
          }
        });
      });
}

namespace detail {

// Half-pixel-centre sampling taps for one axis (align_corners = false).
struct Taps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;
};

inline Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w1[o] = (hi == lo) ? 0.0 : src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

// Bilinear resize of an (H, W, C) map to (out_h, out_w, C).
template <typename T>
Var<T> resize_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w) {
  using namespace detail;
  const Tensor<T>& X = x.value();
  require_rank("resize_bilinear", X.shape(), 3);
  const std::size_t H = X.dim(0), W = X.dim(1), C = X.dim(2);
  if (H == 0 || W == 0 || out_h == 0 || out_w == 0) {
    throw ShapeError("resize_bilinear", X.shape(), Shape{out_h, out_w}, "empty grid");
  }
  if (H == out_h && W == out_w) return x;
  const Taps ty = bilinear_taps(H, out_h);
  const Taps tx = bilinear_taps(W, out_w);
  Tensor<T> out(Shape{out_h, out_w, C});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const T wy = static_cast<T>(ty.w1[oy]);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const T wx = static_cast<T>(tx.w1[ox]);
      const T* p00 = X.ptr() + (ty.i0[oy] * W + tx.i0[ox]) * C;
      const T* p01 = X.ptr() + (ty.i0[oy] * W + tx.i1[ox]) * C;
      const T* p10 = X.ptr() + (ty.i1[oy] * W + tx.i0[ox]) * C;
      const T* p11 = X.ptr() + (ty.i1[oy] * W + tx.i1[ox]) * C;
      T* dst = out.ptr() + (oy * out_w + ox) * C;
      for (std::size_t c = 0; c < C; ++c) {
        const T top = p00[c] + wx * (p01[c] - p00[c]);
        const T bot = p10[c] + wx * (p11[c] - p10[c]);
        dst[c] = top + wy * (bot - top);
      }
    }
  }
  return x.graph->record(std::move(out), {x}, [x, ty, tx, W, C, out_h, out_w](Graph<T>& g, std::size_t self) {
    const Tensor<T>& G = g.node(self).grad;
    g.accumulate(x.id, [&](Tensor<T>& gx) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const T wy = static_cast<T>(ty.w1[oy]);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T wx = static_cast<T>(tx.w1[ox]);
          const T* src = G.ptr() + (oy * out_w + ox) * C;
          T* p00 = gx.ptr() + (ty.i0[oy] * W + tx.i0[ox]) * C;
          T* p01 = gx.ptr() + (ty.i0[oy] * W + tx.i1[ox]) * C;
          T* p10 = gx.ptr() + (ty.i1[oy] * W + tx.i0[ox]) * C;
          T* p11 = gx.ptr() + (ty.i1[oy] * W + tx.i1[ox]) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const T v = src[c];
            p00[c] += v * (T(1) - wy) * (T(1) - wx);
            p01[c] += v * (T(1) - wy) * wx;
            p10[c] += v * wy * (T(1) - wx);
            p11[c] += v * wy * wx;
          }
        }
      }
    });
  });
}

}  // namespace pgma
