// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical decoder with channel-drop.

#pragma once

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgma/assemble/pgmam.hpp"
#include "pgma/core/nn.hpp"
#include "pgma/core/rng.hpp"

namespace pgma::decoder {

using assemble::kChannels;

enum class DropOrigin { RandomTraining, ModeDeterministic, AllKeep };

struct DropVector {
  std::array<bool, kChannels> keep{};
  DropOrigin origin = DropOrigin::AllKeep;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

  static DropVector all_keep() {
    DropVector d;
    d.keep.fill(true);
    return d;
  }
};

// Zeroes channels with keep == false; kept channels pass through untouched.
// An all-zero vector is rejected.
template <typename T>
assemble::AssembledPriorSet<T> channel_drop(Graph<T>& g, const assemble::AssembledPriorSet<T>& set,
                                            const std::vector<bool>& keep) {
  if (keep.size() != kChannels) {
    throw ShapeError("channel_drop", Shape{keep.size()}, Shape{kChannels}, "drop vector length");
  }
  if (std::none_of(keep.begin(), keep.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("channel_drop: drop vector keeps no channel");
  }
  assemble::AssembledPriorSet<T> out = set;
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!keep[c]) {
      out.channels[c] = g.constant(Tensor<T>(Shape{set.h, set.w}));
      out.valid[c] = false;
    }
  }
  return out;
}

template <typename T>
assemble::AssembledPriorSet<T> channel_drop(Graph<T>& g, const assemble::AssembledPriorSet<T>& set,
                                            const DropVector& pi) {
  return channel_drop(g, set, std::vector<bool>(pi.keep.begin(), pi.keep.end()));
}

// Independent Bernoulli(keep_prob) per channel, resampled while all zero.
inline DropVector sample_drop(Rng& rng, double keep_prob) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw std::invalid_argument("sample_drop: keep_prob must be in (0, 1]");
  DropVector d;
  d.origin = DropOrigin::RandomTraining;
  do {
    for (auto& k : d.keep) k = rng.bernoulli(keep_prob);
  } while (d.kept() == 0);
  return d;
}

// Deterministic vector matching the channel availability of a task mode.
inline DropVector mode_drop(const TaskMode& mode) {
  DropVector d;
  const auto avail = assemble::availability(mode);
  std::copy(avail.begin(), avail.end(), d.keep.begin());
  d.origin = d.kept() == kChannels ? DropOrigin::AllKeep : DropOrigin::ModeDeterministic;
  return d;
}

struct DecoderConfig {
  std::size_t width = 32;
  std::size_t low_width = 16;
};

// Level descriptor for the decoder: `index` is the level's position in
// backbone order, which names its parameters.
struct LevelShape {
  std::size_t index = 0;
  std::size_t h = 0, w = 0;
};

inline std::string decoder_prefix(std::size_t level, const char* block) {
  return "decoder." + std::to_string(level) + "." + block;
}

// levels_coarse_to_fine: decode order. low_dim: channel count of the
// low-level skip features.
template <typename T>
void add_decoder_params(ParamStore<T>& ps, const std::vector<LevelShape>& levels_coarse_to_fine, std::size_t low_dim,
                        const DecoderConfig& cfg, Rng& rng) {
  const std::size_t C = cfg.width;
  for (std::size_t i = 0; i < levels_coarse_to_fine.size(); ++i) {
    const std::size_t lv = levels_coarse_to_fine[i].index;
    nn::add_conv(ps, decoder_prefix(lv, "block.conv1"), 3, kChannels, C, rng);
    nn::add_layer_norm(ps, decoder_prefix(lv, "block.norm1"), C);
    nn::add_conv(ps, decoder_prefix(lv, "block.conv2"), 3, C, C, rng);
    nn::add_layer_norm(ps, decoder_prefix(lv, "block.norm2"), C);
    if (i > 0) nn::add_conv(ps, decoder_prefix(lv, "fuse"), 1, 2 * C, C, rng);
  }
  nn::add_conv(ps, "decoder.low.proj", 1, low_dim, cfg.low_width, rng);
  nn::add_conv(ps, "decoder.head.fuse", 1, C + cfg.low_width, C, rng);
  nn::add_conv(ps, "decoder.head.out", 1, C, 1, rng);
}

namespace detail {

template <typename T>
Var<T> conv_block(Graph<T>& g, ParamStore<T>& ps, std::size_t lv, Var<T> x) {
  x = relu(nn::layer_norm(g, ps, decoder_prefix(lv, "block.norm1"), nn::conv(g, ps, decoder_prefix(lv, "block.conv1"), x, 3)));
  return relu(nn::layer_norm(g, ps, decoder_prefix(lv, "block.norm2"), nn::conv(g, ps, decoder_prefix(lv, "block.conv2"), x, 3)));
}

template <typename T>
Var<T> stack_channels(const assemble::AssembledPriorSet<T>& set) {
  std::vector<Var<T>> cols;
  cols.reserve(kChannels);
  for (std::size_t c = 0; c < kChannels; ++c) cols.push_back(reshape(set.channel(c), Shape{set.h, set.w, 1}));
  return concat(cols, 2);
}

}  // namespace detail

// levels: assembled sets ordered coarse -> fine (channel-drop already
// applied); low_level: (h, w, d) features at the finest level's grid.
// Returns (out_h, out_w) logits.
template <typename T>
Var<T> decode(Graph<T>& g, ParamStore<T>& ps, const std::vector<assemble::AssembledPriorSet<T>>& levels,
              Var<T> low_level, std::size_t out_h, std::size_t out_w) {
  if (levels.empty()) throw std::invalid_argument("decode: no levels");
  Var<T> x = detail::conv_block(g, ps, levels[0].level, detail::stack_channels(levels[0]));
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const auto& lv = levels[i];
    if (lv.h < levels[i - 1].h || lv.w < levels[i - 1].w) {
      throw ShapeError("decode", Shape{levels[i - 1].h, levels[i - 1].w}, Shape{lv.h, lv.w},
                       "levels must be ordered coarse to fine");
    }
    Var<T> y = detail::conv_block(g, ps, lv.level, detail::stack_channels(lv));
    Var<T> up = resize_bilinear(x, lv.h, lv.w);
    x = relu(nn::conv(g, ps, decoder_prefix(lv.level, "fuse"), concat<T>({up, y}, 2), 1));
  }
  const auto& finest = levels.back();
  const Shape& ls = low_level.shape();
  if (ls.size() != 3 || ls[0] != finest.h || ls[1] != finest.w) {
    throw ShapeError("decode", ls, Shape{finest.h, finest.w}, "low-level features must match the finest grid");
  }
  Var<T> low = relu(nn::conv(g, ps, "decoder.low.proj", low_level, 1));
  x = relu(nn::conv(g, ps, "decoder.head.fuse", concat<T>({x, low}, 2), 1));
  Var<T> logit = nn::conv(g, ps, "decoder.head.out", x, 1);
  logit = resize_bilinear(logit, out_h, out_w);
  return reshape(logit, Shape{out_h, out_w});
}

}  // namespace pgma::decoder
