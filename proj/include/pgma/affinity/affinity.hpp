// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pixel-correspondence matrices between flattened grids.
//
// Parameter-free: masked flatten followed by row-wise cosine similarity
// (cross support->query, self support, self query).
//
// High-order: one transformer block (multi-head attention, residual, layer
// norm, feed-forward with residual) per affinity and level. The cross block
// uses the query-pixel columns of A_sq as attention QUERY tokens over the
// support-pixel rows of A_ss, so its output is indexed by query pixel and is
// transposed back to (Ls x Lq). The self block uses the columns of the refined
// cross affinity as QUERY over the rows of A_qq.

#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "pgma/core/nn.hpp"
#include "pgma/core/ops.hpp"

namespace pgma::affinity {

enum class AffinityKind { CrossSQ, SelfSS, SelfQQ, HighCross, HighSelf };

template <typename T>
struct Affinity {
  Tensor<T> matrix;  // (La, Lb)
  AffinityKind kind = AffinityKind::CrossSQ;
};

// (h, w, d) -> (h*w, d) with row p scaled by mask[p]; no mask means all ones.
template <typename T, typename U>
Tensor<T> masked_flatten(const Tensor<U>& f, const Tensor<T>* mask = nullptr) {
  if (f.rank() != 3) throw ShapeError("masked_flatten", f.shape(), Shape{0, 0, 0}, "expected (h, w, d)");
  const std::size_t L = f.dim(0) * f.dim(1), d = f.dim(2);
  if (mask && mask->shape() != Shape{f.dim(0), f.dim(1)}) throw ShapeError("masked_flatten", f.shape(), mask->shape());
  Tensor<T> out(Shape{L, d});
  for (std::size_t p = 0; p < L; ++p) {
    const T m = mask ? (*mask)[p] : T(1);
    for (std::size_t i = 0; i < d; ++i) out[p * d + i] = static_cast<T>(f[p * d + i]) * m;
  }
  return out;
}

namespace detail {

template <typename T>
Tensor<T> row_normalized(const Tensor<T>& x) {
  const std::size_t L = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < L; ++p) {
    T n = 0;
    for (std::size_t i = 0; i < d; ++i) n += x[p * d + i] * x[p * d + i];
    if (n == T(0)) continue;
    const T inv = T(1) / std::sqrt(n);
    for (std::size_t i = 0; i < d; ++i) out[p * d + i] = x[p * d + i] * inv;
  }
  return out;
}

}  // namespace detail

// Entry (i, j) = cos(a_i, b_j); rows with zero norm give zeros.
template <typename T>
Tensor<T> cosine_affinity(const Tensor<T>& a, const Tensor<T>& b) {
  using pgma::detail::cmat;
  using pgma::detail::mat;
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) throw ShapeError("cross_affinity", a.shape(), b.shape());
  const Tensor<T> an = detail::row_normalized(a);
  const Tensor<T> bn = &a == &b ? an : detail::row_normalized(b);
  Tensor<T> out(Shape{a.dim(0), b.dim(0)});
  mat(out, a.dim(0), b.dim(0)).noalias() = cmat(an, a.dim(0), a.dim(1)) * cmat(bn, b.dim(0), b.dim(1)).transpose();
  return out;
}

template <typename T>
Affinity<T> cross_affinity(const Tensor<T>& f_s_hat, const Tensor<T>& f_q_hat) {
  return {cosine_affinity(f_s_hat, f_q_hat), AffinityKind::CrossSQ};
}

template <typename T>
Affinity<T> self_affinity(const Tensor<T>& f_hat, AffinityKind kind = AffinityKind::SelfQQ) {
  Affinity<T> a{cosine_affinity(f_hat, f_hat), kind};
  // Exact symmetry regardless of GEMM summation order.
  const std::size_t L = f_hat.dim(0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) a.matrix[j * L + i] = a.matrix[i * L + j];
  return a;
}

// ---------------------------------------------------------------------------
// High-order affinities

struct HighOrderDims {
  std::size_t support_tokens = 0;  // Ls = hs*ws at this level
  std::size_t query_tokens = 0;    // Lq = hq*wq
  std::size_t model_width = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
};

inline std::string high_order_prefix(std::size_t level, const char* block) {
  return "high_order." + std::to_string(level) + "." + block;
}

// Registers the cross and self blocks of one level.
template <typename T>
void add_high_order_params(ParamStore<T>& ps, std::size_t level, const HighOrderDims& d, Rng& rng) {
  const std::size_t Ls = d.support_tokens, Lq = d.query_tokens;
  const std::string cross = high_order_prefix(level, "cross");
  nn::add_attention(ps, cross + ".attn", nn::AttentionDims{Ls, Ls, d.model_width, d.heads, Ls}, rng);
  nn::add_layer_norm(ps, cross + ".ln", Ls);
  nn::add_linear(ps, cross + ".ffn1", Ls, d.ffn_hidden, rng);
  nn::add_linear(ps, cross + ".ffn2", d.ffn_hidden, Ls, rng);

  const std::string self = high_order_prefix(level, "self");
  nn::add_attention(ps, self + ".attn", nn::AttentionDims{Ls, Lq, d.model_width, d.heads, Lq}, rng);
  nn::add_layer_norm(ps, self + ".ln", Lq);
  nn::add_linear(ps, self + ".ffn1", Lq, d.ffn_hidden, rng);
  nn::add_linear(ps, self + ".ffn2", d.ffn_hidden, Lq, rng);
}

// Test initialization: attention and feed-forward branches contribute zero,
// so each block reduces to layer-normalizing its residual input.
template <typename T>
void zero_high_order_branches(ParamStore<T>& ps, std::size_t level) {
  for (const char* block : {"cross", "self"}) {
    const std::string p = high_order_prefix(level, block);
    for (const char* name : {".attn.o_proj.weight", ".attn.o_proj.bias", ".ffn2.weight", ".ffn2.bias"}) {
      ps.get(p + name).value.fill(T(0));
    }
  }
}

namespace detail {

// x -> LN(x + MHA(query_tokens, kv)) -> y + FFN(y)
template <typename T>
Var<T> block(Graph<T>& g, ParamStore<T>& ps, const std::string& prefix, Var<T> residual, Var<T> query_tokens,
             Var<T> kv, std::size_t heads) {
  Var<T> att = nn::multi_head_attention(g, ps, prefix + ".attn", query_tokens, kv, heads);
  Var<T> y = nn::layer_norm(g, ps, prefix + ".ln", add(residual, att));
  Var<T> ffn = nn::linear(g, ps, prefix + ".ffn2", gelu(nn::linear(g, ps, prefix + ".ffn1", y)));
  return add(y, ffn);
}

inline void check_level_dims(const char* op, const Shape& a, const Shape& b, std::size_t rows, std::size_t cols) {
  if (a.size() != 2 || a[0] != rows || a[1] != cols) throw ShapeError(op, a, b, "does not match level parameters");
}

}  // namespace detail

// A'_sq (Ls x Lq) from A_ss (Ls x Ls) and A_sq (Ls x Lq).
template <typename T>
Var<T> high_order_cross(Graph<T>& g, ParamStore<T>& ps, std::size_t level, Var<T> a_ss, Var<T> a_sq,
                        std::size_t heads) {
  const std::string prefix = high_order_prefix(level, "cross");
  const std::size_t Ls = ps.get(prefix + ".ln.gamma").value.size();
  detail::check_level_dims("high_order_cross", a_ss.shape(), a_sq.shape(), Ls, Ls);
  if (a_sq.shape().size() != 2 || a_sq.shape()[0] != Ls) {
    throw ShapeError("high_order_cross", a_sq.shape(), a_ss.shape(), "support axis mismatch");
  }
  Var<T> tokens = transpose(a_sq);  // (Lq, Ls)
  return transpose(detail::block(g, ps, prefix, tokens, tokens, a_ss, heads));
}

// A'_qq (Lq x Lq) from A'_sq (Ls x Lq) and A_qq (Lq x Lq).
template <typename T>
Var<T> high_order_self(Graph<T>& g, ParamStore<T>& ps, std::size_t level, Var<T> a_prime_sq, Var<T> a_qq,
                       std::size_t heads) {
  const std::string prefix = high_order_prefix(level, "self");
  const std::size_t Lq = ps.get(prefix + ".ln.gamma").value.size();
  const std::size_t Ls = ps.get(prefix + ".attn.q_proj.weight").value.dim(0);
  detail::check_level_dims("high_order_self", a_qq.shape(), a_prime_sq.shape(), Lq, Lq);
  detail::check_level_dims("high_order_self", a_prime_sq.shape(), a_qq.shape(), Ls, Lq);
  return detail::block(g, ps, prefix, a_qq, transpose(a_prime_sq), a_qq, heads);
}

// Query-only variant, used when no support image exists: A_qq serves as
// QUERY, KEY and VALUE. Requires Ls == Lq at this level.
template <typename T>
Var<T> high_order_self_query_only(Graph<T>& g, ParamStore<T>& ps, std::size_t level, Var<T> a_qq,
                                  std::size_t heads) {
  const std::string prefix = high_order_prefix(level, "self");
  const std::size_t Lq = ps.get(prefix + ".ln.gamma").value.size();
  const std::size_t Ls = ps.get(prefix + ".attn.q_proj.weight").value.dim(0);
  detail::check_level_dims("high_order_self", a_qq.shape(), Shape{Lq, Lq}, Lq, Lq);
  if (Ls != Lq) throw ShapeError("high_order_self", Shape{Ls}, Shape{Lq}, "query-only path needs Ls == Lq");
  return detail::block(g, ps, prefix, a_qq, a_qq, a_qq, heads);
}

}  // namespace pgma::affinity
