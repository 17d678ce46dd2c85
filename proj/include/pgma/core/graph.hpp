// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation. A Graph records one node per
// operator application; creation order is a topological order, so backward
// simply walks the tape in reverse.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pgma/core/tensor.hpp"

namespace pgma {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

// Named trainable parameters. std::map keeps addresses stable and iteration
// order deterministic.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.try_emplace(name, Parameter<T>{name, std::move(value)});
    if (!inserted) throw std::invalid_argument("duplicate parameter: " + name);
    return it->second;
  }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <typename T>
class Graph;

// Handle to a recorded node.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph->requires_grad(*this); }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf that receives a gradient (inputs under verification).
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  // Each parameter maps to a single leaf so fan-out accumulates in one place.
  Var<T> param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    Var<T> v = push(p.value, true, &p, {});
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  // Record an operator result. The backward closure is only kept when some
  // parent requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(parents), std::move(fn));
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(value), rg, nullptr, rg ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  const Node& node(std::size_t id) const { return nodes_[id]; }

  // Gradient buffer of a node, allocated on first touch.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds into the gradient of `id` if it participates in differentiation.
  template <typename F>
  void accumulate(std::size_t id, F&& fill) {
    if (!nodes_[id].requires_grad) return;
    fill(grad_buffer(id));
  }

  void backward(Var<T> loss) {
    if (consumed_) throw std::logic_error("backward: graph already consumed");
    const Node& l = nodes_[loss.id];
    if (l.value.size() != 1) {
      throw ShapeError("backward", l.value.shape(), Shape{1}, "loss must be scalar");
    }
    consumed_ = true;
    visits_ = 0;
    if (!l.requires_grad) return;
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      ++visits_;
      if (n.backward) n.backward(*this, i);
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t last_backward_visits() const { return visits_; }

  // Gradient w.r.t. a node; zeros when the node received none.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  std::vector<std::pair<Parameter<T>*, Tensor<T>>> param_grads() const {
    std::vector<std::pair<Parameter<T>*, Tensor<T>>> out;
    out.reserve(param_nodes_.size());
    for (const auto& [p, id] : param_nodes_) {
      const Node& n = nodes_[id];
      out.emplace_back(p, n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad);
    }
    return out;
  }

 private:
  Var<T> push(Tensor<T> value, bool rg, Parameter<T>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, rg, p, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, std::size_t> param_nodes_;
  bool consumed_ = false;
  std::size_t visits_ = 0;
};

}  // namespace pgma
