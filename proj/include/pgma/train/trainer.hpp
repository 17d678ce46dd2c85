// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Episodic training loop.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pgma/core/adamw.hpp"
#include "pgma/core/checkpoint.hpp"
#include "pgma/model/model.hpp"
#include "pgma/train/experiment.hpp"
#include "pgma/train/losses.hpp"

namespace pgma::train {

using EpisodeSource = std::function<Episode(std::uint64_t index)>;

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, const std::string& what)
      : std::runtime_error("training aborted at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

inline Tensor<float> flip_map(const Tensor<float>& t) {
  Tensor<float> out(t.shape());
  const std::size_t H = t.dim(0), W = t.dim(1), C = t.rank() == 3 ? t.dim(2) : 1;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) out[(y * W + x) * C + c] = t[(y * W + (W - 1 - x)) * C + c];
  return out;
}

inline Mask flip_mask(const Mask& m) {
  Mask out(m.shape());
  const std::size_t H = m.dim(0), W = m.dim(1);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) out[y * W + x] = m[y * W + (W - 1 - x)];
  return out;
}

inline FeatureStack flip_stack(const FeatureStack& fs) {
  FeatureStack out = fs;
  for (auto& st : out.stages)
    for (auto& f : st) f = flip_map(f);
  out.clip_visual = flip_map(fs.clip_visual);
  return out;
}

// Flips the query and each support independently with probability 1/2.
inline Episode augment_flips(Episode ep, Rng& rng) {
  if (rng.bernoulli(0.5)) {
    ep.query = flip_stack(ep.query);
    if (ep.query_mask) ep.query_mask = flip_mask(*ep.query_mask);
  }
  for (auto& s : ep.supports) {
    if (rng.bernoulli(0.5)) {
      s.features = flip_stack(s.features);
      s.mask = flip_mask(s.mask);
    }
  }
  return ep;
}

template <typename T>
Tensor<T> mask_tensor(const Mask& m) {
  Tensor<T> t(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i] ? T(1) : T(0);
  return t;
}

struct StepLoss {
  double total = 0, dice = 0, ce = 0;
};

template <typename T>
struct EpisodeGrad {
  StepLoss loss;
  GradMap<T> grads;
};

// Forward + backward on one episode.
template <typename T>
EpisodeGrad<T> episode_gradient(PgmaModel<T>& model, const Episode& ep, const std::vector<decoder::DropVector>* drops,
                                double lambda) {
  if (!ep.query_mask) throw EpisodeError("training episode has no query mask");
  Graph<T> g;
  ForwardOptions<T> opt{ep.mode, drops};
  auto out = model.forward(g, ep, opt);
  auto parts = logit_loss(out.logits, g.constant(mask_tensor<T>(*ep.query_mask)), lambda);
  EpisodeGrad<T> r;
  r.loss = {static_cast<double>(parts.total.value()[0]), static_cast<double>(parts.dice.value()[0]),
            static_cast<double>(parts.ce.value()[0])};
  if (!std::isfinite(r.loss.total)) return r;
  g.backward(parts.total);
  for (auto& [p, grad] : g.param_grads()) r.grads[p->name] = std::move(grad);
  return r;
}

struct TrainOutputs {
  std::filesystem::path checkpoint;  // empty: no checkpoints written
  std::filesystem::path loss_csv;    // empty: no CSV
  std::string config_text;           // stored inside checkpoints
};

struct TrainResult {
  std::vector<StepLoss> losses;  // batch mean per step
};

// Mode under which a training episode runs. With channel-drop on, a
// mode_mix share of episodes hides the support (query-only pattern) or the
// support mask (mask-free pattern); the episode data stays the same.
inline TaskMode training_mode(const TrainConfig& tc, std::uint64_t index) {
  if (!tc.channel_drop || tc.mode_mix <= 0.0) return TaskMode{};
  Rng rng(tc.seed, "train.mode", index);
  if (rng.uniform() >= tc.mode_mix) return TaskMode{};
  return TaskMode{rng.bernoulli(0.5) ? TaskKind::ZSS : TaskKind::COSEG, 0};
}

template <typename T>
std::vector<decoder::DropVector> training_drops(const PgmaModel<T>& model, const TrainConfig& tc, std::uint64_t index,
                                                const TaskMode& mode = {}) {
  const std::size_t n = model.levels().size();
  std::vector<decoder::DropVector> d(n, decoder::DropVector::all_keep());
  if (!tc.channel_drop) return d;
  if (mode.kind != TaskKind::FSS) {
    for (auto& v : d) v = decoder::mode_drop(mode);
    return d;
  }
  Rng rng(tc.seed, "train.drop", index);
  for (auto& v : d) v = decoder::sample_drop(rng, tc.keep_prob);
  return d;
}

template <typename T>
TrainResult train(PgmaModel<T>& model, const EpisodeSource& source, const TrainConfig& tc, const TrainOutputs& io = {},
                  const std::function<void(std::size_t, const StepLoss&)>& on_step = {}) {
  tc.validate();
  AdamWState<T> opt;
  opt.config.lr = tc.lr;
  opt.config.weight_decay = tc.weight_decay;

  std::ofstream csv;
  if (!io.loss_csv.empty()) {
    if (io.loss_csv.has_parent_path()) std::filesystem::create_directories(io.loss_csv.parent_path());
    csv.open(io.loss_csv);
    if (!csv) throw std::runtime_error("cannot write " + io.loss_csv.string());
    csv << "step,total,dice,ce\n" << std::setprecision(9);
  }
  auto save = [&] {
    if (!io.checkpoint.empty()) save_checkpoint(io.checkpoint, io.config_text, model.params(), &opt);
  };

  TrainResult result;
  const std::size_t workers = std::max<std::size_t>(1, std::min(tc.threads, tc.batch));
  std::vector<EpisodeGrad<T>> slots(tc.batch);

  for (std::size_t step = 0; step < tc.steps; ++step) {
    auto run = [&](std::size_t b) {
      const std::uint64_t idx = step * tc.batch + b;
      Episode ep = source(idx);
      ep.mode = training_mode(tc, idx);
      if (tc.augment) {
        Rng rng(tc.seed, "train.augment", idx);
        ep = augment_flips(std::move(ep), rng);
      }
      const auto drops = training_drops(model, tc, idx, ep.mode);
      slots[b] = episode_gradient(model, ep, &drops, tc.lambda);
    };
    if (workers == 1) {
      for (std::size_t b = 0; b < tc.batch; ++b) run(b);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t b = w; b < tc.batch; b += workers) run(b);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Reduce in batch order so results do not depend on the worker count.
    StepLoss mean;
    GradMap<T> grads;
    const T inv = T(1) / static_cast<T>(tc.batch);
    for (std::size_t b = 0; b < tc.batch; ++b) {
      const auto& s = slots[b];
      if (!std::isfinite(s.loss.total)) {
        save();
        throw TrainingAborted(step, "non-finite loss");
      }
      mean.total += s.loss.total / static_cast<double>(tc.batch);
      mean.dice += s.loss.dice / static_cast<double>(tc.batch);
      mean.ce += s.loss.ce / static_cast<double>(tc.batch);
      for (const auto& [name, g] : s.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) it = grads.emplace(name, Tensor<T>(g.shape())).first;
        auto& acc = it->second;
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * inv;
      }
    }
    try {
      adamw_step(model.params(), grads, opt);
    } catch (const NonFiniteGradient& e) {
      save();
      throw TrainingAborted(step, e.what());
    }
    result.losses.push_back(mean);
    if (csv) csv << step << ',' << mean.total << ',' << mean.dice << ',' << mean.ce << '\n';
    if (on_step) on_step(step, mean);
    if (tc.checkpoint_every && (step + 1) % tc.checkpoint_every == 0) save();
  }
  save();
  return result;
}

}  // namespace pgma::train
