// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameterized layers. Parameters live in a ParamStore under dotted names
// ("<prefix>.weight", "<prefix>.bias", ...) and are looked up at forward time,
// which lets the same model description run at float or double precision.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pgma/core/graph.hpp"
#include "pgma/core/ops.hpp"
#include "pgma/core/rng.hpp"

namespace pgma::nn {

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(prefix + ".weight", uniform_init<T>(Shape{in, out}, bound, rng));
  ps.add(prefix + ".bias", uniform_init<T>(Shape{out}, bound, rng));
}

template <typename T>
Var<T> linear(Graph<T>& g, ParamStore<T>& ps, const std::string& prefix, Var<T> x) {
  return add_bias(matmul(x, g.param(ps.get(prefix + ".weight"))), g.param(ps.get(prefix + ".bias")));
}

template <typename T>
void add_layer_norm(ParamStore<T>& ps, const std::string& prefix, std::size_t n) {
  ps.add(prefix + ".gamma", Tensor<T>(Shape{n}, T(1)));
  ps.add(prefix + ".beta", Tensor<T>(Shape{n}, T(0)));
}

template <typename T>
Var<T> layer_norm(Graph<T>& g, ParamStore<T>& ps, const std::string& prefix, Var<T> x) {
  return pgma::layer_norm(x, g.param(ps.get(prefix + ".gamma")), g.param(ps.get(prefix + ".beta")));
}

template <typename T>
void add_conv(ParamStore<T>& ps, const std::string& prefix, std::size_t k, std::size_t in, std::size_t out,
              Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * in));
  ps.add(prefix + ".weight", uniform_init<T>(Shape{k * k * in, out}, bound, rng));
  ps.add(prefix + ".bias", uniform_init<T>(Shape{out}, bound, rng));
}

template <typename T>
Var<T> conv(Graph<T>& g, ParamStore<T>& ps, const std::string& prefix, Var<T> x, std::size_t k) {
  return conv2d(x, g.param(ps.get(prefix + ".weight")), g.param(ps.get(prefix + ".bias")), k);
}

struct AttentionDims {
  std::size_t query_in = 0;  // feature width of QUERY tokens
  std::size_t kv_in = 0;     // feature width of KEY/VALUE tokens
  std::size_t model = 64;    // projected width d_m
  std::size_t heads = 4;
  std::size_t out = 0;       // output token width
};

template <typename T>
void add_attention(ParamStore<T>& ps, const std::string& prefix, const AttentionDims& d, Rng& rng) {
  if (d.heads == 0 || d.model % d.heads != 0) {
    throw std::invalid_argument("attention: model width must be divisible by head count");
  }
  add_linear(ps, prefix + ".q_proj", d.query_in, d.model, rng);
  add_linear(ps, prefix + ".k_proj", d.kv_in, d.model, rng);
  add_linear(ps, prefix + ".v_proj", d.kv_in, d.model, rng);
  add_linear(ps, prefix + ".o_proj", d.model, d.out, rng);
}

// Scaled dot-product multi-head attention with learned input/output
// projections. query: (Lq, query_in), kv: (Lk, kv_in) -> (Lq, out).
template <typename T>
Var<T> multi_head_attention(Graph<T>& g, ParamStore<T>& ps, const std::string& prefix, Var<T> query, Var<T> kv,
                            std::size_t heads) {
  Var<T> q = linear(g, ps, prefix + ".q_proj", query);
  Var<T> k = linear(g, ps, prefix + ".k_proj", kv);
  Var<T> v = linear(g, ps, prefix + ".v_proj", kv);
  const std::size_t model = q.value().dim(1);
  if (heads == 0 || model % heads != 0) throw ShapeError("multi_head_attention", q.shape(), Shape{heads});
  const std::size_t dh = model / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = slice(q, 1, h * dh, dh);
    Var<T> kh = slice(k, 1, h * dh, dh);
    Var<T> vh = slice(v, 1, h * dh, dh);
    Var<T> att = softmax(scale(matmul(qh, kh, false, true), scale_factor), 1);
    outs.push_back(matmul(att, vh));
  }
  Var<T> merged = heads == 1 ? outs[0] : concat(outs, 1);
  return linear(g, ps, prefix + ".o_proj", merged);
}

}  // namespace pgma::nn
