// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pgma/core/tensor.hpp"

namespace pgma {

using Mask = Tensor<std::uint8_t>;

enum class TaskKind : std::uint8_t { FSS = 0, ZSS = 1, BBOX = 2, COSEG = 3, CORRUPT_MASK = 4, CORRUPT_IMAGE = 5 };

struct TaskMode {
  TaskKind kind = TaskKind::FSS;
  int level = 0;  // corruption level 1..3 for the CORRUPT_* kinds

  friend bool operator==(const TaskMode&, const TaskMode&) = default;

  bool uses_support() const { return kind != TaskKind::ZSS; }
  bool uses_support_mask() const { return kind != TaskKind::ZSS && kind != TaskKind::COSEG; }

  std::string str() const {
    switch (kind) {
      case TaskKind::FSS: return "fss";
      case TaskKind::ZSS: return "zss";
      case TaskKind::BBOX: return "bbox";
      case TaskKind::COSEG: return "coseg";
      case TaskKind::CORRUPT_MASK: return "corrupt-mask:" + std::to_string(level);
      case TaskKind::CORRUPT_IMAGE: return "corrupt-image:" + std::to_string(level);
    }
    return "?";
  }

  static TaskMode parse(const std::string& s) {
    if (s == "fss") return {TaskKind::FSS, 0};
    if (s == "zss") return {TaskKind::ZSS, 0};
    if (s == "bbox") return {TaskKind::BBOX, 0};
    if (s == "coseg") return {TaskKind::COSEG, 0};
    for (auto [prefix, kind] : {std::pair{"corrupt-mask:", TaskKind::CORRUPT_MASK},
                                std::pair{"corrupt-image:", TaskKind::CORRUPT_IMAGE}}) {
      const std::string p(prefix);
      if (s.rfind(p, 0) == 0 && s.size() == p.size() + 1 && s.back() >= '1' && s.back() <= '3') {
        return {kind, s.back() - '0'};
      }
    }
    throw std::invalid_argument("invalid task mode '" + s +
                                "' (expected fss|zss|bbox|coseg|corrupt-mask:N|corrupt-image:N, N in 1..3)");
  }
};

// Multi-level features of one image. stages[s][l] is the (h, w, d) map of
// layer l in backbone stage s; stage 0 is the finest.
struct FeatureStack {
  std::vector<std::vector<Tensor<float>>> stages;
  Tensor<float> clip_visual;  // (h_c, w_c, d_t)
  std::size_t height = 0;     // image size
  std::size_t width = 0;

  std::size_t level_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.size();
    return n;
  }

  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;
};

struct Shot {
  FeatureStack features;
  Mask mask;  // (H_s, W_s), {0,1}

  friend bool operator==(const Shot&, const Shot&) = default;
};

struct Episode {
  std::vector<Shot> supports;      // K >= 0
  FeatureStack query;
  std::optional<Mask> query_mask;  // absent at pure inference
  Tensor<float> text_embed;        // (d_t)
  int class_id = -1;
  TaskMode mode;

  std::size_t shots() const { return supports.size(); }

  friend bool operator==(const Episode&, const Episode&) = default;
};

class EpisodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline bool is_binary(const Mask& m) {
  for (auto v : m.data()) if (v > 1) return false;
  return true;
}

inline void validate_stack(const FeatureStack& fs, std::size_t text_dim, const std::string& who) {
  if (fs.stages.empty()) throw EpisodeError(who + ": no feature stages");
  for (std::size_t s = 0; s < fs.stages.size(); ++s) {
    if (fs.stages[s].empty()) throw EpisodeError(who + ": empty stage " + std::to_string(s));
    for (const auto& f : fs.stages[s]) {
      if (f.rank() != 3) throw EpisodeError(who + ": feature map must be rank 3, got " + shape_str(f.shape()));
      if (f.shape() != fs.stages[s][0].shape()) throw EpisodeError(who + ": layers of a stage must share shape");
      if (!f.all_finite()) throw EpisodeError(who + ": non-finite feature payload");
    }
  }
  if (fs.clip_visual.rank() != 3 || fs.clip_visual.dim(2) != text_dim) {
    throw EpisodeError(who + ": clip map " + shape_str(fs.clip_visual.shape()) + " does not match text dim " +
                       std::to_string(text_dim));
  }
  if (!fs.clip_visual.all_finite()) throw EpisodeError(who + ": non-finite clip payload");
  if (fs.height == 0 || fs.width == 0) throw EpisodeError(who + ": image size unset");
}

inline void validate_mask(const Mask& m, const FeatureStack& fs, const std::string& who) {
  if (m.shape() != Shape{fs.height, fs.width}) {
    throw EpisodeError(who + ": mask " + shape_str(m.shape()) + " does not match image size " +
                       shape_str(Shape{fs.height, fs.width}));
  }
  if (!is_binary(m)) throw EpisodeError(who + ": mask is not {0,1}-valued");
}

inline void validate(const Episode& ep) {
  if (ep.text_embed.rank() != 1 || ep.text_embed.size() == 0) throw EpisodeError("text embedding must be a vector");
  if (!ep.text_embed.all_finite()) throw EpisodeError("non-finite text embedding");
  const std::size_t dt = ep.text_embed.size();
  validate_stack(ep.query, dt, "query");
  if (ep.query_mask) validate_mask(*ep.query_mask, ep.query, "query");
  for (std::size_t k = 0; k < ep.supports.size(); ++k) {
    const std::string who = "support" + std::to_string(k);
    validate_stack(ep.supports[k].features, dt, who);
    validate_mask(ep.supports[k].mask, ep.supports[k].features, who);
    if (ep.supports[k].features.stages.size() != ep.query.stages.size()) {
      throw EpisodeError(who + ": stage layout differs from query");
    }
  }
}

}  // namespace pgma
