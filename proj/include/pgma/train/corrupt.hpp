// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Support-mask and feature corruptions used by the task modes.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pgma/core/rng.hpp"
#include "pgma/episode/episode.hpp"

namespace pgma::train {

// Structuring radius (pixels) and relative noise sigma per level 1..3.
struct CorruptionScale {
  std::array<int, 3> radius{1, 2, 4};
  std::array<double, 3> sigma{0.05, 0.1, 0.2};

  static void check_level(int level) {
    if (level < 0 || level > 3) throw std::invalid_argument("corruption level must be in 0..3, got " + std::to_string(level));
  }
  int radius_at(int level) const {
    check_level(level);
    return level == 0 ? 0 : radius[level - 1];
  }
  double sigma_at(int level) const {
    check_level(level);
    return level == 0 ? 0.0 : sigma[level - 1];
  }
};

// Tight axis-aligned box of the foreground, filled.
inline Mask bbox_fill(const Mask& m) {
  if (m.rank() != 2) throw ShapeError("bbox_fill", m.shape(), Shape{0, 0}, "expected (h, w)");
  const std::size_t H = m.dim(0), W = m.dim(1);
  std::size_t r0 = H, r1 = 0, c0 = W, c1 = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (m[y * W + x]) {
        r0 = std::min(r0, y);
        r1 = std::max(r1, y);
        c0 = std::min(c0, x);
        c1 = std::max(c1, x);
      }
  if (r0 == H) throw std::invalid_argument("bbox_fill: empty mask has no bounding box");
  Mask out(m.shape());
  for (std::size_t y = r0; y <= r1; ++y)
    for (std::size_t x = c0; x <= c1; ++x) out[y * W + x] = 1;
  return out;
}

// Disk structuring element; pixels outside the image count as background.
inline Mask morph(const Mask& m, int radius, bool dilate) {
  if (radius <= 0) return m;
  const int H = static_cast<int>(m.dim(0)), W = static_cast<int>(m.dim(1));
  Mask out(m.shape());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      bool hit = !dilate;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < H && xx >= 0 && xx < W && m[yy * W + xx];
          if (dilate && v) hit = true;
          if (!dilate && !v) hit = false;
        }
      out[y * W + x] = hit ? 1 : 0;
    }
  return out;
}

// Erosion or dilation (chosen by the seed, independent of the level).
inline Mask corrupt_mask(const Mask& m, int level, std::uint64_t seed, const CorruptionScale& sc = {}) {
  const int r = sc.radius_at(level);
  if (r == 0) return m;
  Rng rng(seed, "corrupt.mask");
  return morph(m, r, rng.bernoulli(0.5));
}

// Adds N(0, (sigma * std(f))^2) noise to every feature map of the stack.
inline FeatureStack corrupt_image_features(const FeatureStack& fs, int level, std::uint64_t seed,
                                           const CorruptionScale& sc = {}) {
  const double sigma = sc.sigma_at(level);
  if (sigma == 0.0) return fs;
  FeatureStack out = fs;
  Rng rng(seed, "corrupt.image");
  auto perturb = [&](Tensor<float>& t) {
    double mean = 0, sq = 0;
    for (float v : t.vec()) mean += v;
    mean /= static_cast<double>(t.size());
    for (float v : t.vec()) sq += (v - mean) * (v - mean);
    const double sd = sigma * std::sqrt(sq / static_cast<double>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += static_cast<float>(rng.normal(0.0, sd));
  };
  for (auto& stage : out.stages)
    for (auto& f : stage) perturb(f);
  perturb(out.clip_visual);
  return out;
}

// Applies the input transform of a task mode: box-filled or corrupted support
// masks, noisy features, dropped supports for ZSS.
inline Episode apply_mode(Episode ep, const TaskMode& mode, std::uint64_t seed, const CorruptionScale& sc = {}) {
  switch (mode.kind) {
    case TaskKind::ZSS:
      ep.supports.clear();
      break;
    case TaskKind::BBOX:
      for (auto& s : ep.supports) s.mask = bbox_fill(s.mask);
      break;
    case TaskKind::CORRUPT_MASK:
      for (std::size_t k = 0; k < ep.supports.size(); ++k)
        ep.supports[k].mask = corrupt_mask(ep.supports[k].mask, mode.level, substream_seed(seed, "mode.mask", k), sc);
      break;
    case TaskKind::CORRUPT_IMAGE:
      ep.query = corrupt_image_features(ep.query, mode.level, substream_seed(seed, "mode.query", 0), sc);
      for (std::size_t k = 0; k < ep.supports.size(); ++k)
        ep.supports[k].features =
            corrupt_image_features(ep.supports[k].features, mode.level, substream_seed(seed, "mode.support", k), sc);
      break;
    default:
      break;
  }
  ep.mode = mode;
  return ep;
}

}  // namespace pgma::train
