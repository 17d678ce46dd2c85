// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// The assembled network: base priors and affinities per level, prior assembly,
// channel-drop and hierarchical decoding into query logits.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgma/affinity/affinity.hpp"
#include "pgma/assemble/pgmam.hpp"
#include "pgma/config/config.hpp"
#include "pgma/decoder/hdcdm.hpp"
#include "pgma/episode/episode.hpp"
#include "pgma/prior/prior_adapter.hpp"

namespace pgma {

struct ModelConfig {
  std::size_t image_size = 32;
  std::vector<std::size_t> stage_grids{16, 8};  // finest stage first
  std::vector<std::size_t> stage_layers{2, 2};
  std::size_t feature_dim = 32;
  std::size_t attn_width = 64;
  std::size_t attn_heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t decoder_width = 32;
  std::size_t low_width = 16;
  bool high_order = true;  // false: parameter-free affinities only
  std::uint64_t init_seed = 1;

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = {
        "model.image_size",  "model.stage_grids",   "model.stage_layers", "model.feature_dim",
        "model.attn_width",  "model.attn_heads",    "model.ffn_hidden",   "model.decoder_width",
        "model.low_width",   "model.high_order",    "model.init_seed"};
    return k;
  }

  Config to_config() const {
    Config c;
    c.set("model.image_size", image_size);
    c.set_list("model.stage_grids", stage_grids);
    c.set_list("model.stage_layers", stage_layers);
    c.set("model.feature_dim", feature_dim);
    c.set("model.attn_width", attn_width);
    c.set("model.attn_heads", attn_heads);
    c.set("model.ffn_hidden", ffn_hidden);
    c.set("model.decoder_width", decoder_width);
    c.set("model.low_width", low_width);
    c.set("model.high_order", high_order);
    c.set("model.init_seed", init_seed);
    return c;
  }

  static ModelConfig from_config(const Config& c) {
    ModelConfig m;
    m.image_size = c.get("model.image_size", m.image_size);
    m.stage_grids = c.get_list("model.stage_grids", m.stage_grids);
    m.stage_layers = c.get_list("model.stage_layers", m.stage_layers);
    m.feature_dim = c.get("model.feature_dim", m.feature_dim);
    m.attn_width = c.get("model.attn_width", m.attn_width);
    m.attn_heads = c.get("model.attn_heads", m.attn_heads);
    m.ffn_hidden = c.get("model.ffn_hidden", m.ffn_hidden);
    m.decoder_width = c.get("model.decoder_width", m.decoder_width);
    m.low_width = c.get("model.low_width", m.low_width);
    m.high_order = c.get("model.high_order", m.high_order);
    m.init_seed = c.get("model.init_seed", m.init_seed);
    m.validate();
    return m;
  }

  void validate() const {
    if (stage_grids.empty() || stage_grids.size() != stage_layers.size()) {
      throw ConfigError("model: stage_grids and stage_layers must be non-empty and equally long");
    }
    for (std::size_t s = 1; s < stage_grids.size(); ++s) {
      if (stage_grids[s] > stage_grids[s - 1]) throw ConfigError("model: stage grids must not grow with depth");
    }
    if (attn_heads == 0 || attn_width % attn_heads != 0) throw ConfigError("model: attn_width % attn_heads != 0");
  }
};

struct LevelInfo {
  std::size_t index = 0;  // backbone order
  std::size_t stage = 0, layer = 0;
  std::size_t grid = 0;
};

template <typename T>
struct ForwardOptions {
  TaskMode mode;
  // Per-level drop vectors in backbone order; null means mode_drop(mode).
  const std::vector<decoder::DropVector>* drops = nullptr;
};

template <typename T>
struct ForwardOutput {
  Var<T> logits;                                        // (H, W)
  std::vector<assemble::AssembledPriorSet<T>> levels;   // coarse -> fine, after channel-drop
};

template <typename T>
class PgmaModel {
 public:
  explicit PgmaModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed, "init");
    build(params_, rng);
  }

  // Adopts trained parameters; names and shapes must match the config.
  PgmaModel(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    ParamStore<T> ref;
    Rng rng(0, "init");
    build(ref, rng);
    if (ref.size() != params_.size()) {
      throw std::invalid_argument("checkpoint has " + std::to_string(params_.size()) + " parameters, config expects " +
                                  std::to_string(ref.size()));
    }
    for (const auto& [name, p] : ref) {
      if (!params_.contains(name)) throw std::invalid_argument("checkpoint lacks parameter " + name);
      if (params_.get(name).value.shape() != p.value.shape()) {
        throw ShapeError("checkpoint", params_.get(name).value.shape(), p.value.shape(), name);
      }
    }
  }

  template <typename U>
  PgmaModel<U> cast() const {
    return PgmaModel<U>(cfg_, params_.template cast<U>());
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  std::vector<LevelInfo> levels() const {
    std::vector<LevelInfo> out;
    for (std::size_t s = 0; s < cfg_.stage_grids.size(); ++s)
      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l) out.push_back({out.size(), s, l, cfg_.stage_grids[s]});
    return out;
  }

  assemble::ChannelMask allowed_channels(const TaskMode& mode) const {
    auto m = assemble::availability(mode);
    if (!cfg_.high_order) {
      using namespace assemble;
      m[kHighSelfClip] = m[kHighSelfVisual] = m[kHighCrossGt] = m[kHighCrossClip] = false;
    }
    return m;
  }

  ForwardOutput<T> forward(Graph<T>& g, const Episode& ep, const ForwardOptions<T>& opt) {
    using namespace assemble;
    check_stack(ep.query, "query");
    const bool with_support = opt.mode.uses_support();
    const bool with_mask = opt.mode.uses_support_mask();
    if (with_support && ep.supports.empty()) {
      throw EpisodeError("mode " + opt.mode.str() + " needs at least one support shot");
    }
    const std::size_t K = with_support ? ep.supports.size() : 0;
    for (std::size_t k = 0; k < K; ++k) check_stack(ep.supports[k].features, "support" + std::to_string(k));
    const ChannelMask allowed = allowed_channels(opt.mode);
    const auto infos = levels();
    if (opt.drops && opt.drops->size() != infos.size()) {
      throw ShapeError("forward", Shape{opt.drops->size()}, Shape{infos.size()}, "one drop vector per level");
    }

    std::vector<AssembledPriorSet<T>> sets(infos.size());
    for (std::size_t s = 0; s < cfg_.stage_grids.size(); ++s) {
      const std::size_t gq = ep.query.stages[s][0].dim(0), wq = ep.query.stages[s][0].dim(1);
      Var<T> q_clip = g.constant(prior::textual_prior<T>(ep.query.clip_visual, ep.text_embed, std::pair{gq, wq}).map);

      // Support-side priors of this stage, per shot.
      std::vector<std::optional<Tensor<T>>> s_gt(K);
      std::vector<Var<T>> s_clip;
      for (std::size_t k = 0; k < K; ++k) {
        const FeatureStack& fs = ep.supports[k].features;
        const std::size_t hs = fs.stages[s][0].dim(0), ws = fs.stages[s][0].dim(1);
        if (with_mask) s_gt[k] = prior::support_gt_prior<T>(ep.supports[k].mask, hs, ws).map;
        s_clip.push_back(g.constant(prior::support_clip_prior<T>(fs.clip_visual, ep.text_embed, hs, ws).map));
      }

      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l) {
        const std::size_t lv = level_index(s, l);
        const Tensor<T> fq_hat = affinity::masked_flatten<T, float>(ep.query.stages[s][l]);
        Var<T> a_qq = g.constant(affinity::self_affinity(fq_hat).matrix);

        std::vector<AssembledPriorSet<T>> shots;
        for (std::size_t k = 0; k < K; ++k) {
          const Tensor<float>& fs = ep.supports[k].features.stages[s][l];
          const Tensor<T> fs_hat = s_gt[k] ? affinity::masked_flatten<T>(fs, &*s_gt[k])
                                           : affinity::masked_flatten<T, float>(fs);
          const Tensor<T> a_sq_t = affinity::cosine_affinity(fs_hat, fq_hat);
          const Tensor<T> a_ss_t = affinity::self_affinity(fs_hat, affinity::AffinityKind::SelfSS).matrix;
          Var<T> a_sq = g.constant(a_sq_t);

          LevelPriors<T> pr{q_clip, g.constant(prior::visual_prior(a_sq_t, gq, wq).map),
                            s_gt[k] ? std::optional<Var<T>>(g.constant(*s_gt[k])) : std::nullopt, s_clip[k]};
          LevelAffinities<T> af{a_qq, a_sq, std::nullopt, std::nullopt};
          if (cfg_.high_order) {
            af.high_sq = affinity::high_order_cross(g, params_, lv, g.constant(a_ss_t), a_sq, cfg_.attn_heads);
            af.high_qq = affinity::high_order_self(g, params_, lv, *af.high_sq, a_qq, cfg_.attn_heads);
          }
          shots.push_back(assemble_level(g, lv, pr, af, allowed));
        }
        if (K == 0) {
          LevelPriors<T> pr{q_clip, std::nullopt, std::nullopt, std::nullopt};
          LevelAffinities<T> af{a_qq, std::nullopt, std::nullopt, std::nullopt};
          if (cfg_.high_order && allowed[kHighSelfClip]) {
            af.high_qq = affinity::high_order_self_query_only(g, params_, lv, a_qq, cfg_.attn_heads);
          }
          shots.push_back(assemble_level(g, lv, pr, af, allowed));
        }
        AssembledPriorSet<T> fused = fuse_shots(shots);
        const decoder::DropVector pi = opt.drops ? (*opt.drops)[lv] : decoder::mode_drop(opt.mode);
        sets[lv] = decoder::channel_drop(g, fused, pi);
      }
    }

    // Coarse -> fine.
    std::vector<AssembledPriorSet<T>> ordered;
    for (std::size_t s = cfg_.stage_grids.size(); s-- > 0;)
      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l) ordered.push_back(sets[level_index(s, l)]);
    Var<T> low = g.constant(ep.query.stages[0][0].template cast<T>());
    Var<T> logits = decoder::decode(g, params_, ordered, low, ep.query.height, ep.query.width);
    return {logits, std::move(ordered)};
  }

 private:
  std::size_t level_index(std::size_t stage, std::size_t layer) const {
    std::size_t idx = 0;
    for (std::size_t s = 0; s < stage; ++s) idx += cfg_.stage_layers[s];
    return idx + layer;
  }

  void check_stack(const FeatureStack& fs, const std::string& who) const {
    if (fs.stages.size() != cfg_.stage_grids.size()) {
      throw EpisodeError(who + ": episode has " + std::to_string(fs.stages.size()) + " stages, model expects " +
                         std::to_string(cfg_.stage_grids.size()));
    }
    for (std::size_t s = 0; s < fs.stages.size(); ++s) {
      if (fs.stages[s].size() != cfg_.stage_layers[s]) throw EpisodeError(who + ": stage layer count mismatch");
      const auto& f = fs.stages[s][0];
      if (f.dim(0) != cfg_.stage_grids[s] || f.dim(1) != cfg_.stage_grids[s] || f.dim(2) != cfg_.feature_dim) {
        throw EpisodeError(who + ": stage " + std::to_string(s) + " features " + shape_str(f.shape()) +
                           " do not match model grid " + std::to_string(cfg_.stage_grids[s]) + " / dim " +
                           std::to_string(cfg_.feature_dim));
      }
    }
  }

  void build(ParamStore<T>& ps, Rng& rng) const {
    const auto infos = levels();
    if (cfg_.high_order) {
      for (const auto& li : infos) {
        const std::size_t L = li.grid * li.grid;
        affinity::add_high_order_params(
            ps, li.index, affinity::HighOrderDims{L, L, cfg_.attn_width, cfg_.attn_heads, cfg_.ffn_hidden}, rng);
      }
    }
    std::vector<decoder::LevelShape> order;
    for (std::size_t s = cfg_.stage_grids.size(); s-- > 0;)
      for (std::size_t l = 0; l < cfg_.stage_layers[s]; ++l)
        order.push_back({level_index(s, l), cfg_.stage_grids[s], cfg_.stage_grids[s]});
    decoder::add_decoder_params(ps, order, cfg_.feature_dim,
                                decoder::DecoderConfig{cfg_.decoder_width, cfg_.low_width}, rng);
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
};

}  // namespace pgma
