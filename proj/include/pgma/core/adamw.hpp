// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "pgma/core/graph.hpp"

namespace pgma {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter " + param), param_(param) {}
  const std::string& param() const noexcept { return param_; }

 private:
  std::string param_;
};

template <typename T>
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

// Gradients keyed by parameter name.
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// One decoupled-weight-decay Adam step with bias correction. Parameters absent
// from `grads` are treated as having zero gradient. All gradients are checked
// before any parameter is touched.
template <typename T>
void adamw_step(ParamStore<T>& params, const GradMap<T>& grads, AdamWState<T>& state) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::out_of_range("gradient for unknown parameter: " + name);
    if (g.shape() != params.get(name).value.shape()) {
      throw ShapeError("adamw_step", params.get(name).value.shape(), g.shape(), name);
    }
    if (!g.all_finite()) throw NonFiniteGradient(name);
  }
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape() != p.value.shape()) m = Tensor<T>(p.value.shape());
    if (v.shape() != p.value.shape()) v = Tensor<T>(p.value.shape());
    auto git = grads.find(name);
    const Tensor<T>* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
      double w = static_cast<double>(p.value[i]);
      w -= c.lr * c.weight_decay * w;
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w -= c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.value[i] = static_cast<T>(w);
    }
  }
}

}  // namespace pgma
