// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Class-agnostic base priors: textual (cosine to the class text vector),
// visual (best support match per query pixel), and the support-side ground
// truth and textual maps at level resolution. All priors are training-free.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

#include "pgma/core/ops.hpp"
#include "pgma/core/tensor.hpp"

namespace pgma::prior {

inline constexpr double kMinMaxEps = 1e-8;

enum class PriorSource { TextualQuery, TextualSupport, Visual, GtSupport };

template <typename T>
struct PriorMap {
  Tensor<T> map;  // (h, w), values in [0, 1]
  PriorSource source = PriorSource::TextualQuery;
  bool degenerate = false;  // raw input was constant (e.g. empty support evidence)
};

// (m - min) / (max - min + eps).
template <typename T>
Tensor<T> minmax_norm(const Tensor<T>& m) {
  if (m.empty()) return m;
  const T mn = m.min();
  const T denom = m.max() - mn + static_cast<T>(kMinMaxEps);
  Tensor<T> out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - mn) / denom;
  return out;
}

template <typename T>
bool is_constant(const Tensor<T>& m) {
  return m.empty() || m.min() == m.max();
}

// Bilinear resize of an (h, w) or (h, w, c) map.
template <typename T>
Tensor<T> resize(const Tensor<T>& m, std::size_t h, std::size_t w) {
  if (m.rank() == 2) {
    if (m.dim(0) == h && m.dim(1) == w) return m;
    return resize(m.reshaped(Shape{m.dim(0), m.dim(1), 1}), h, w).reshaped(Shape{h, w});
  }
  Graph<T> g;
  return resize_bilinear(g.constant(m), h, w).value();
}

// Area-average resampling of an (H, W) map to (h, w). Each output cell is the
// mean of the input over its footprint, with fractional edge coverage.
template <typename T, typename U>
Tensor<T> area_resize(const Tensor<U>& m, std::size_t h, std::size_t w) {
  if (m.rank() != 2) throw ShapeError("area_resize", m.shape(), Shape{h, w});
  const std::size_t H = m.dim(0), W = m.dim(1);
  auto coverage = [](std::size_t in, std::size_t out) {
    // weights[o] = list of (input index, overlap length in output units)
    std::vector<std::vector<std::pair<std::size_t, double>>> wts(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double lo = o * scale, hi = (o + 1) * scale;
      for (std::size_t i = static_cast<std::size_t>(lo); i < in && static_cast<double>(i) < hi; ++i) {
        const double ov = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (ov > 0) wts[o].emplace_back(i, ov / scale);
      }
    }
    return wts;
  };
  const auto wy = coverage(H, h), wx = coverage(W, w);
  Tensor<T> out(Shape{h, w});
  for (std::size_t oy = 0; oy < h; ++oy)
    for (std::size_t ox = 0; ox < w; ++ox) {
      double acc = 0;
      for (auto [iy, ay] : wy[oy])
        for (auto [ix, ax] : wx[ox]) acc += ay * ax * static_cast<double>(m[iy * W + ix]);
      out[oy * w + ox] = static_cast<T>(acc);
    }
  return out;
}

// Per-pixel cosine between an (h, w, d) map and a d-vector; zero-norm pixels
// give 0.
template <typename T, typename U>
Tensor<T> cosine_map(const Tensor<U>& features, const Tensor<U>& vec) {
  if (features.rank() != 3 || vec.rank() != 1 || features.dim(2) != vec.size()) {
    throw ShapeError("textual_prior", features.shape(), vec.shape());
  }
  const std::size_t h = features.dim(0), w = features.dim(1), d = features.dim(2);
  double vn = 0;
  for (std::size_t i = 0; i < d; ++i) vn += static_cast<double>(vec[i]) * vec[i];
  vn = std::sqrt(vn);
  Tensor<T> out(Shape{h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double dot = 0, fn = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double f = features[p * d + i];
      dot += f * vec[i];
      fn += f * f;
    }
    fn = std::sqrt(fn);
    out[p] = (fn == 0 || vn == 0) ? T(0) : static_cast<T>(dot / (fn * vn));
  }
  return out;
}

// Cosine to the text vector, min-max normalized, optionally resampled to
// (out_h, out_w).
template <typename T, typename U>
PriorMap<T> textual_prior(const Tensor<U>& clip_visual, const Tensor<U>& text_embed,
                          std::optional<std::pair<std::size_t, std::size_t>> out_size = std::nullopt,
                          PriorSource source = PriorSource::TextualQuery) {
  Tensor<T> raw = cosine_map<T>(clip_visual, text_embed);
  PriorMap<T> p{minmax_norm(raw), source, is_constant(raw)};
  if (out_size) p.map = resize(p.map, out_size->first, out_size->second);
  return p;
}

// Max over the support axis of A_sq (Ls x Lq), normalized, as an (hq, wq) map.
template <typename T>
PriorMap<T> visual_prior(const Tensor<T>& a_sq, std::size_t hq, std::size_t wq) {
  if (a_sq.rank() != 2 || a_sq.dim(1) != hq * wq || a_sq.dim(0) == 0) {
    throw ShapeError("visual_prior", a_sq.shape(), Shape{hq, wq});
  }
  const std::size_t ls = a_sq.dim(0), lq = a_sq.dim(1);
  Tensor<T> raw(Shape{hq, wq});
  for (std::size_t j = 0; j < lq; ++j) {
    T best = a_sq[j];
    for (std::size_t i = 1; i < ls; ++i) best = std::max(best, a_sq[i * lq + j]);
    raw[j] = best;
  }
  const bool all_zero = std::all_of(a_sq.data().begin(), a_sq.data().end(), [](T v) { return v == T(0); });
  return PriorMap<T>{minmax_norm(raw), PriorSource::Visual, all_zero || is_constant(raw)};
}

// Support ground truth, area-averaged down to the level grid.
template <typename T>
PriorMap<T> support_gt_prior(const Tensor<std::uint8_t>& mask, std::size_t h, std::size_t w) {
  return PriorMap<T>{area_resize<T>(mask, h, w), PriorSource::GtSupport, false};
}

// Support textual prior at the level grid.
template <typename T, typename U>
PriorMap<T> support_clip_prior(const Tensor<U>& clip_visual, const Tensor<U>& text_embed, std::size_t h,
                               std::size_t w) {
  return textual_prior<T>(clip_visual, text_embed, std::pair{h, w}, PriorSource::TextualSupport);
}

}  // namespace pgma::prior
