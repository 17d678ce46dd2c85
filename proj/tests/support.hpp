// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: random tensors and central-difference gradient checks.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pgma/core/ops.hpp"
#include "pgma/core/rng.hpp"

namespace pgma::testing {

inline Tensor<double> randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.normal(0.0, scale);
  return t;
}

inline Tensor<double> randu(Shape s, Rng& rng, double lo, double hi) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

inline double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    da += a[i] * a[i];
    db += b[i] * b[i];
  }
  const double den = std::max(std::sqrt(da), std::sqrt(db));
  return den < 1e-12 ? std::sqrt(num) : std::sqrt(num) / den;
}

using GraphFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Reduces fn's output to a scalar with fixed random weights, so the whole
// Jacobian is exercised, and compares the analytic input gradients against
// central differences. Returns the worst per-input relative error.
inline double grad_check(const GraphFn& fn, const std::vector<Tensor<double>>& inputs, double h = 1e-6,
                         std::uint64_t seed = 99) {
  Tensor<double> weights;
  auto eval = [&](const std::vector<Tensor<double>>& xs, bool with_grad, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var<double>> vs;
    for (const auto& x : xs) vs.push_back(g.leaf(x));
    Var<double> out = fn(g, vs);
    if (weights.empty()) {
      Rng rng(seed, "grad_check.weights");
      weights = randn(out.shape(), rng);
    }
    double s = 0;
    for (std::size_t i = 0; i < out.value().size(); ++i) s += out.value()[i] * weights[i];
    if (with_grad) {
      Var<double> w = g.constant(weights);
      Var<double> scalar = sum_all(mul(out, w));
      g.backward(scalar);
      for (const auto& v : vs) grads->push_back(g.grad(v));
    }
    return s;
  };
  std::vector<Tensor<double>> analytic;
  eval(inputs, true, &analytic);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> numeric(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto xp = inputs, xm = inputs;
      xp[k][i] += h;
      xm[k][i] -= h;
      numeric[i] = (eval(xp, false, nullptr) - eval(xm, false, nullptr)) / (2 * h);
    }
    worst = std::max(worst, rel_error(analytic[k], numeric));
  }
  return worst;
}

}  // namespace pgma::testing
