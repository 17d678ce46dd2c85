// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic shape episodes. Each class is a geometric shape family with its
// own striped texture signature. Images hold 1-3 shapes; the per-level
// features are a fixed random projection of pooled appearance plus a
// foreground class signal and Gaussian noise, and the text-space map carries
// the class text vector on foreground cells and a random mixture of other
// class vectors elsewhere.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pgma/core/rng.hpp"
#include "pgma/episode/episode.hpp"

namespace pgma {

struct SynthConfig {
  std::size_t image_size = 32;
  std::vector<std::size_t> stage_grids{16, 8};  // finest stage first
  std::vector<std::size_t> stage_layers{2, 2};
  std::size_t feature_dim = 32;
  std::size_t text_dim = 16;
  std::size_t clip_grid = 8;
  std::size_t appearance_dim = 16;
  int num_classes = 20;
  int num_folds = 4;
  int min_shapes = 1;
  int max_shapes = 3;
  double min_area = 0.05;  // bounds on the target mask area fraction
  double max_area = 0.60;
  double feature_noise = 0.6;
  double clip_noise = 0.35;
  std::size_t shots = 1;
  std::uint64_t seed = 7;  // fixes class signatures and projections

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SynthConfig: " + m); };
    if (image_size == 0) fail("image_size must be positive");
    if (stage_grids.empty() || stage_grids.size() != stage_layers.size()) fail("stage_grids/stage_layers mismatch");
    for (auto g : stage_grids) if (g == 0 || image_size % g != 0) fail("stage grid must divide image_size");
    for (auto l : stage_layers) if (l == 0) fail("every stage needs at least one layer");
    if (clip_grid == 0 || image_size % clip_grid != 0) fail("clip_grid must divide image_size");
    if (feature_dim == 0 || text_dim == 0 || appearance_dim == 0) fail("dimensions must be positive");
    if (num_classes < 2) fail("need at least two classes");
    if (num_folds < 1) fail("num_folds must be positive");
    if (min_shapes < 1 || max_shapes < min_shapes) fail("invalid shape count range");
    if (!(min_area > 0 && min_area < max_area && max_area < 1)) fail("invalid area bounds");
    if (feature_noise < 0 || clip_noise < 0) fail("noise must be non-negative");
  }
};

struct FoldSplit {
  std::vector<int> base;
  std::vector<int> novel;
};

// Contiguous folds: fold i holds classes [i*n/f, (i+1)*n/f).
inline std::vector<int> fold_classes(const SynthConfig& cfg, int fold) {
  if (cfg.num_folds <= 0 || cfg.num_classes % cfg.num_folds != 0) {
    throw std::invalid_argument("fold_split: " + std::to_string(cfg.num_classes) + " classes do not divide into " +
                                std::to_string(cfg.num_folds) + " folds");
  }
  if (fold < 0 || fold >= cfg.num_folds) {
    throw std::out_of_range("fold_split: fold " + std::to_string(fold) + " out of range [0," +
                            std::to_string(cfg.num_folds) + ")");
  }
  const int per = cfg.num_classes / cfg.num_folds;
  std::vector<int> out;
  for (int c = fold * per; c < (fold + 1) * per; ++c) out.push_back(c);
  return out;
}

inline FoldSplit fold_split(const SynthConfig& cfg, int novel_fold) {
  FoldSplit s;
  s.novel = fold_classes(cfg, novel_fold);
  for (int c = 0; c < cfg.num_classes; ++c) {
    if (std::find(s.novel.begin(), s.novel.end(), c) == s.novel.end()) s.base.push_back(c);
  }
  return s;
}

// Fixed per-configuration randomness: class signatures, text vectors, level
// projections.
class SynthWorld {
 public:
  explicit SynthWorld(SynthConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed, "synth.world");
    const std::size_t A = cfg_.appearance_dim, D = cfg_.feature_dim;
    for (int c = 0; c < cfg_.num_classes; ++c) {
      texture_.push_back(unit(rng, A));
      pattern_.push_back(unit(rng, A));
      text_.push_back(unit(rng, cfg_.text_dim));
      freq_.push_back(rng.uniform(0.6, 1.6));
      orient_.push_back(rng.uniform(0.0, std::numbers::pi));
    }
    for (std::size_t s = 0; s < cfg_.stage_grids.size(); ++s) {
      std::vector<std::vector<double>> sig;
      for (int c = 0; c < cfg_.num_classes; ++c) sig.push_back(unit(rng, D));
      signal_.push_back(std::move(sig));
      std::vector<std::vector<double>> projs;
      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l) {
        std::vector<double> P(A * D);
        for (auto& v : P) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(D)));
        projs.push_back(std::move(P));
      }
      proj_.push_back(std::move(projs));
    }
  }

  const SynthConfig& config() const { return cfg_; }

  Tensor<float> text_embed(int cls) const {
    Tensor<float> t(Shape{cfg_.text_dim});
    for (std::size_t i = 0; i < cfg_.text_dim; ++i) t[i] = static_cast<float>(text_[cls][i]);
    return t;
  }

  Episode episode(int class_id, std::uint64_t seed) const { return episode(class_id, seed, cfg_.shots); }

  Episode episode(int class_id, std::uint64_t seed, std::size_t shots) const {
    if (class_id < 0 || class_id >= cfg_.num_classes) {
      throw std::out_of_range("synth_episode: class " + std::to_string(class_id) + " not in config");
    }
    Episode ep;
    ep.class_id = class_id;
    ep.text_embed = text_embed(class_id);
    {
      Rng rng(seed, "synth.query");
      auto img = render(class_id, rng);
      ep.query = features(img, class_id, rng);
      ep.query_mask = img.mask(class_id);
    }
    for (std::size_t k = 0; k < shots; ++k) {
      Rng rng(seed, "synth.support", k);
      auto img = render(class_id, rng);
      ep.supports.push_back(Shot{features(img, class_id, rng), img.mask(class_id)});
    }
    return ep;
  }

 private:
  struct Image {
    std::size_t size = 0;
    std::vector<int> label;           // class per pixel, -1 background
    std::vector<double> appearance;   // (size*size, A)

    Mask mask(int cls) const {
      Mask m(Shape{size, size});
      for (std::size_t i = 0; i < label.size(); ++i) m[i] = label[i] == cls ? 1 : 0;
      return m;
    }
  };

  static std::vector<double> unit(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    double norm = 0;
    for (auto& x : v) { x = rng.normal(); norm += x * x; }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  }

  static bool inside(int type, double dx, double dy, double r) {
    switch (type) {
      case 0: return dx * dx + dy * dy <= r * r;
      case 1: return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
      case 2: return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= 0.6 * (dy + r);
      case 3: return std::abs(dx) + std::abs(dy) <= 1.1 * r;
      default:
        return (std::abs(dx) <= 0.4 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.4 * r && std::abs(dx) <= r);
    }
  }

  void paint(Image& img, int cls, Rng& rng, double rmin, double rmax) const {
    const double S = static_cast<double>(img.size);
    const double r = rng.uniform(rmin, rmax) * S;
    const double cx = rng.uniform(0.15, 0.85) * S, cy = rng.uniform(0.15, 0.85) * S;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::size_t A = cfg_.appearance_dim;
    const int type = cls % 5;
    for (std::size_t y = 0; y < img.size; ++y) {
      for (std::size_t x = 0; x < img.size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (!inside(type, ca * dx + sa * dy, -sa * dx + ca * dy, r)) continue;
        const std::size_t p = y * img.size + x;
        img.label[p] = cls;
        const double u = freq_[cls] * (x * std::cos(orient_[cls]) + y * std::sin(orient_[cls])) + phase;
        const double stripe = 0.6 * std::sin(u);
        for (std::size_t a = 0; a < A; ++a) img.appearance[p * A + a] = texture_[cls][a] + stripe * pattern_[cls][a];
      }
    }
  }

  Image render(int target, Rng& rng) const {
    const std::size_t S = cfg_.image_size, A = cfg_.appearance_dim;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Image img;
      img.size = S;
      img.label.assign(S * S, -1);
      img.appearance.assign(S * S * A, 0.0);
      const auto bg = unit(rng, A);
      const auto g1 = unit(rng, A), g2 = unit(rng, A);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          for (std::size_t a = 0; a < A; ++a)
            img.appearance[(y * S + x) * A + a] =
                bg[a] + 0.5 * ((x + 0.5) / S - 0.5) * g1[a] + 0.5 * ((y + 0.5) / S - 0.5) * g2[a];

      const int n = rng.uniform_int(cfg_.min_shapes, cfg_.max_shapes);
      const int target_slot = rng.uniform_int(0, n - 1);
      for (int i = 0; i < n; ++i) {
        if (i == target_slot) {
          paint(img, target, rng, 0.18, 0.42);
        } else {
          int other = rng.uniform_int(0, cfg_.num_classes - 2);
          if (other >= target) ++other;
          paint(img, other, rng, 0.12, 0.3);
        }
      }
      std::size_t area = 0;
      for (int l : img.label) area += (l == target);
      const double frac = static_cast<double>(area) / static_cast<double>(S * S);
      if (frac >= cfg_.min_area && frac <= cfg_.max_area) return img;
    }
    throw std::runtime_error("synth_episode: could not satisfy area bounds");
  }

  // Per-cell class fractions over a (g x g) pooling of the label map.
  std::vector<std::vector<double>> class_fractions(const Image& img, std::size_t g) const {
    const std::size_t f = img.size / g;
    const double inv = 1.0 / static_cast<double>(f * f);
    std::vector<std::vector<double>> frac(g * g, std::vector<double>(cfg_.num_classes + 1, 0.0));
    for (std::size_t y = 0; y < img.size; ++y)
      for (std::size_t x = 0; x < img.size; ++x) {
        const int l = img.label[y * img.size + x];
        frac[(y / f) * g + x / f][l < 0 ? cfg_.num_classes : l] += inv;
      }
    return frac;
  }

  FeatureStack features(const Image& img, int target, Rng& rng) const {
    const std::size_t S = img.size, A = cfg_.appearance_dim, D = cfg_.feature_dim;
    FeatureStack fs;
    fs.height = fs.width = S;
    for (std::size_t s = 0; s < cfg_.stage_grids.size(); ++s) {
      const std::size_t g = cfg_.stage_grids[s], f = S / g;
      // Pooled appearance.
      std::vector<double> pooled(g * g * A, 0.0);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          for (std::size_t a = 0; a < A; ++a)
            pooled[((y / f) * g + x / f) * A + a] += img.appearance[(y * S + x) * A + a] / static_cast<double>(f * f);
      const auto frac = class_fractions(img, g);
      const double class_gain = s == 0 ? 0.3 : 0.6;
      const double sigma = cfg_.feature_noise * (s == 0 ? 1.0 : 0.7) / std::sqrt(static_cast<double>(D));
      std::vector<Tensor<float>> layers;
      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l) {
        const auto& P = proj_[s][l];
        Tensor<float> t(Shape{g, g, D});
        for (std::size_t p = 0; p < g * g; ++p) {
          for (std::size_t d = 0; d < D; ++d) {
            double v = 0;
            for (std::size_t a = 0; a < A; ++a) v += pooled[p * A + a] * P[a * D + d];
            for (int c = 0; c < cfg_.num_classes; ++c) {
              if (frac[p][c] > 0) v += class_gain * frac[p][c] * signal_[s][c][d];
            }
            v += sigma * rng.normal();
            t[p * D + d] = static_cast<float>(v);
          }
        }
        layers.push_back(std::move(t));
      }
      fs.stages.push_back(std::move(layers));
    }

    // Text-space map.
    const std::size_t cg = cfg_.clip_grid, Dt = cfg_.text_dim;
    const auto frac = class_fractions(img, cg);
    int mix[3];
    for (int& m : mix) {
      m = rng.uniform_int(0, cfg_.num_classes - 2);
      if (m >= target) ++m;
    }
    const double sigma = cfg_.clip_noise / std::sqrt(static_cast<double>(Dt));
    fs.clip_visual = Tensor<float>(Shape{cg, cg, Dt});
    for (std::size_t p = 0; p < cg * cg; ++p) {
      double w[3], wsum = 0;
      for (double& x : w) { x = rng.uniform(); wsum += x; }
      for (std::size_t d = 0; d < Dt; ++d) {
        double v = 0;
        for (int c = 0; c < cfg_.num_classes; ++c) if (frac[p][c] > 0) v += frac[p][c] * text_[c][d];
        double off = 0;
        for (int i = 0; i < 3; ++i) off += w[i] / wsum * text_[mix[i]][d];
        v += frac[p][cfg_.num_classes] * off;
        if (sigma > 0) v += sigma * rng.normal();
        fs.clip_visual[p * Dt + d] = static_cast<float>(v);
      }
    }
    return fs;
  }

  SynthConfig cfg_;
  std::vector<std::vector<double>> texture_, pattern_, text_;
  std::vector<double> freq_, orient_;
  std::vector<std::vector<std::vector<double>>> signal_;  // [stage][class][D]
  std::vector<std::vector<std::vector<double>>> proj_;    // [stage][layer][A*D]
};

inline Episode synth_episode(const SynthConfig& cfg, int class_id, std::uint64_t seed) {
  return SynthWorld(cfg).episode(class_id, seed);
}

// Episodic sampler over a class subset: draw `index` yields a class chosen
// uniformly from `classes` and an episode seeded from (seed, index).
class EpisodeSampler {
 public:
  EpisodeSampler(const SynthWorld& world, std::vector<int> classes, std::uint64_t seed, std::string stream)
      : world_(world), classes_(std::move(classes)), seed_(seed), stream_(std::move(stream)) {
    if (classes_.empty()) throw std::invalid_argument("EpisodeSampler: empty class set");
  }

  int class_at(std::uint64_t index) const {
    Rng rng(seed_, stream_ + ".class", index);
    return classes_[rng.uniform_int(0, static_cast<int>(classes_.size()) - 1)];
  }

  Episode draw(std::uint64_t index) const { return draw(index, world_.config().shots); }
  Episode draw(std::uint64_t index, std::size_t shots) const {
    return world_.episode(class_at(index), substream_seed(seed_, stream_ + ".episode", index), shots);
  }

  const std::vector<int>& classes() const { return classes_; }

 private:
  const SynthWorld& world_;
  std::vector<int> classes_;
  std::uint64_t seed_;
  std::string stream_;
};

}  // namespace pgma
