// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prior assembly. A general assemble unit contracts a prior through an
// affinity: softmax over the source axis, matrix-vector product, min-max
// normalization. Ten (prior, affinity) interactions are assembled per level
// in a fixed channel order that the decoder weights depend on.

#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pgma/core/ops.hpp"
#include "pgma/episode/episode.hpp"

namespace pgma::assemble {

inline constexpr std::size_t kChannels = 10;

// Channel order of an assembled prior set.
enum Channel : std::size_t {
  kQueryClip = 0,          // p_q^clip
  kVisual = 1,             // M_q^v
  kSelfClip = 2,           // A_qq . p_q^clip
  kSelfVisual = 3,         // A_qq . M_q^v
  kHighSelfClip = 4,       // A'_qq . p_q^clip
  kHighSelfVisual = 5,     // A'_qq . M_q^v
  kCrossGt = 6,            // A_sq^T . M_s^gt
  kCrossClip = 7,          // A_sq^T . p_s^clip
  kHighCrossGt = 8,        // A'_sq^T . M_s^gt
  kHighCrossClip = 9,      // A'_sq^T . p_s^clip
};

inline constexpr std::array<const char*, kChannels> kChannelNames = {
    "p_q^clip",        "M_q^v",           "A_qq.p_q^clip",     "A_qq.M_q^v",      "A'_qq.p_q^clip",
    "A'_qq.M_q^v",     "A_sq^T.M_s^gt",   "A_sq^T.p_s^clip",   "A'_sq^T.M_s^gt",  "A'_sq^T.p_s^clip"};

using ChannelMask = std::array<bool, kChannels>;

// Channels that carry information in a task mode.
inline ChannelMask availability(const TaskMode& mode) {
  ChannelMask m;
  m.fill(true);
  if (mode.kind == TaskKind::ZSS) {
    m.fill(false);
    m[kQueryClip] = m[kSelfClip] = m[kHighSelfClip] = true;
  } else if (mode.kind == TaskKind::COSEG) {
    m[kCrossGt] = m[kHighCrossGt] = false;
  }
  return m;
}

// Which axis of the affinity is summed over.
enum class SourceAxis { Rows = 0, Cols = 1 };

// softmax(A) along the source axis, contracted with p, then min-max
// normalized. Rows: A is (L_src x L_tgt) -> output length L_tgt (A^T . p).
// Cols: A is (L_tgt x L_src) -> output length L_tgt (A . p).
template <typename T>
Var<T> gau(Var<T> a, Var<T> p, SourceAxis axis) {
  const Shape& as = a.shape();
  if (as.size() != 2) throw ShapeError("gau", as, p.shape(), "affinity must be rank 2");
  const std::size_t src = axis == SourceAxis::Rows ? as[0] : as[1];
  if (p.value().size() != src) throw ShapeError("gau", as, p.shape(), "prior length != source axis");
  Var<T> col = reshape(p, Shape{src, 1});
  Var<T> s = softmax(a, static_cast<std::size_t>(axis));
  Var<T> out = axis == SourceAxis::Rows ? matmul(s, col, true, false) : matmul(s, col);
  return minmax_normalize(out, T(1e-8));
}

template <typename T>
struct AssembledPriorSet {
  std::array<std::optional<Var<T>>, kChannels> channels;  // each (h, w)
  ChannelMask valid{};
  std::size_t level = 0;
  std::size_t h = 0, w = 0;

  Var<T> channel(std::size_t c) const { return *channels.at(c); }
};

// Base priors of one level (query grid hq x wq, support grid hs x ws).
template <typename T>
struct LevelPriors {
  Var<T> query_clip;                 // (hq, wq)
  std::optional<Var<T>> visual;      // (hq, wq)
  std::optional<Var<T>> support_gt;  // (hs, ws)
  std::optional<Var<T>> support_clip;
};

template <typename T>
struct LevelAffinities {
  Var<T> a_qq;                           // (Lq, Lq)
  std::optional<Var<T>> a_sq;            // (Ls, Lq)
  std::optional<Var<T>> high_sq;         // (Ls, Lq)
  std::optional<Var<T>> high_qq;         // (Lq, Lq)
};

// Builds the ten channels. A channel is computed only if allowed by `allowed`
// and its inputs exist; otherwise it is zero-filled and flagged invalid.
template <typename T>
AssembledPriorSet<T> assemble_level(Graph<T>& g, std::size_t level, const LevelPriors<T>& pr,
                                    const LevelAffinities<T>& af, const ChannelMask& allowed) {
  AssembledPriorSet<T> out;
  out.level = level;
  const Shape& qs = pr.query_clip.shape();
  if (qs.size() != 2) throw ShapeError("assemble_level", qs, Shape{0, 0}, "query prior must be (h, w)");
  out.h = qs[0];
  out.w = qs[1];
  const std::size_t Lq = out.h * out.w;
  if (af.a_qq.shape() != Shape{Lq, Lq}) throw ShapeError("assemble_level", af.a_qq.shape(), Shape{Lq, Lq});

  auto set = [&](std::size_t c, auto&& make, bool inputs_present) {
    if (allowed[c] && inputs_present) {
      out.channels[c] = reshape(make(), Shape{out.h, out.w});
      out.valid[c] = true;
    }
  };
  set(kQueryClip, [&] { return pr.query_clip; }, true);
  set(kVisual, [&] { return *pr.visual; }, pr.visual.has_value());
  set(kSelfClip, [&] { return gau(af.a_qq, pr.query_clip, SourceAxis::Cols); }, true);
  set(kSelfVisual, [&] { return gau(af.a_qq, *pr.visual, SourceAxis::Cols); }, pr.visual.has_value());
  set(kHighSelfClip, [&] { return gau(*af.high_qq, pr.query_clip, SourceAxis::Cols); }, af.high_qq.has_value());
  set(kHighSelfVisual, [&] { return gau(*af.high_qq, *pr.visual, SourceAxis::Cols); },
      af.high_qq.has_value() && pr.visual.has_value());
  set(kCrossGt, [&] { return gau(*af.a_sq, *pr.support_gt, SourceAxis::Rows); },
      af.a_sq.has_value() && pr.support_gt.has_value());
  set(kCrossClip, [&] { return gau(*af.a_sq, *pr.support_clip, SourceAxis::Rows); },
      af.a_sq.has_value() && pr.support_clip.has_value());
  set(kHighCrossGt, [&] { return gau(*af.high_sq, *pr.support_gt, SourceAxis::Rows); },
      af.high_sq.has_value() && pr.support_gt.has_value());
  set(kHighCrossClip, [&] { return gau(*af.high_sq, *pr.support_clip, SourceAxis::Rows); },
      af.high_sq.has_value() && pr.support_clip.has_value());

  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!out.channels[c]) out.channels[c] = g.constant(Tensor<T>(Shape{out.h, out.w}));
  }
  return out;
}

// K-shot fusion: support-derived channels are averaged, M_q^v is the
// elementwise max, query-only channels come from shot 0.
template <typename T>
AssembledPriorSet<T> fuse_shots(const std::vector<AssembledPriorSet<T>>& shots) {
  if (shots.empty()) throw std::invalid_argument("fuse_shots: empty shot list");
  if (shots.size() == 1) return shots[0];
  AssembledPriorSet<T> out = shots[0];
  for (const auto& s : shots) {
    if (s.h != out.h || s.w != out.w || s.level != out.level) {
      throw ShapeError("fuse_shots", Shape{out.h, out.w}, Shape{s.h, s.w}, "level shapes differ");
    }
  }
  const T inv = T(1) / static_cast<T>(shots.size());
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (c == kQueryClip || c == kSelfClip) continue;
    Var<T> acc = shots[0].channel(c);
    bool valid = shots[0].valid[c];
    for (std::size_t k = 1; k < shots.size(); ++k) {
      acc = c == kVisual ? maximum(acc, shots[k].channel(c)) : add(acc, shots[k].channel(c));
      valid = valid && shots[k].valid[c];
    }
    out.channels[c] = c == kVisual ? acc : scale(acc, inv);
    out.valid[c] = valid;
  }
  return out;
}

}  // namespace pgma::assemble
