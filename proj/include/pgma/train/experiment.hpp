// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Resolved run configuration: synth.*, model.* and train.* keys in one flat
// config. Every key has a default; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <set>
#include <string>

#include "pgma/config/config.hpp"
#include "pgma/episode/synth.hpp"
#include "pgma/model/model.hpp"

namespace pgma::train {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double lambda = 0.5;
  double keep_prob = 0.7;
  bool channel_drop = true;
  double mode_mix = 0.25;  // share of episodes trained under a query-only or mask-free pattern
  bool augment = true;  // random horizontal flips, per image
  std::uint64_t seed = 7;
  int fold = 0;         // novel fold; the others are trained on
  std::size_t checkpoint_every = 500;
  std::size_t threads = 1;

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = {"train.steps",     "train.batch",        "train.lr",
                                            "train.weight_decay", "train.lambda",    "train.keep_prob",  "train.mode_mix",
                                            "train.channel_drop", "train.augment",   "train.seed",
                                            "train.fold",      "train.checkpoint_every", "train.threads"};
    return k;
  }

  Config to_config() const {
    Config c;
    c.set("train.steps", steps);
    c.set("train.batch", batch);
    c.set("train.lr", lr);
    c.set("train.weight_decay", weight_decay);
    c.set("train.lambda", lambda);
    c.set("train.keep_prob", keep_prob);
    c.set("train.channel_drop", channel_drop);
    c.set("train.mode_mix", mode_mix);
    c.set("train.augment", augment);
    c.set("train.seed", seed);
    c.set("train.fold", fold);
    c.set("train.checkpoint_every", checkpoint_every);
    c.set("train.threads", threads);
    return c;
  }

  static TrainConfig from_config(const Config& c) {
    TrainConfig t;
    t.steps = c.get("train.steps", t.steps);
    t.batch = c.get("train.batch", t.batch);
    t.lr = c.get("train.lr", t.lr);
    t.weight_decay = c.get("train.weight_decay", t.weight_decay);
    t.lambda = c.get("train.lambda", t.lambda);
    t.keep_prob = c.get("train.keep_prob", t.keep_prob);
    t.channel_drop = c.get("train.channel_drop", t.channel_drop);
    t.mode_mix = c.get("train.mode_mix", t.mode_mix);
    t.augment = c.get("train.augment", t.augment);
    t.seed = c.get("train.seed", t.seed);
    t.fold = c.get("train.fold", t.fold);
    t.checkpoint_every = c.get("train.checkpoint_every", t.checkpoint_every);
    t.threads = c.get("train.threads", t.threads);
    t.validate();
    return t;
  }

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda must be in [0, 1]");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("train.keep_prob must be in (0, 1]");
    if (!(mode_mix >= 0.0 && mode_mix <= 1.0)) throw ConfigError("train.mode_mix must be in [0, 1]");
    if (batch == 0) throw ConfigError("train.batch must be positive");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  }
};

inline const std::set<std::string>& synth_keys() {
  static const std::set<std::string> k = {
      "synth.image_size", "synth.stage_grids",  "synth.stage_layers", "synth.feature_dim", "synth.text_dim",
      "synth.clip_grid",  "synth.appearance_dim", "synth.num_classes", "synth.num_folds", "synth.min_shapes",
      "synth.max_shapes", "synth.min_area",     "synth.max_area",     "synth.feature_noise", "synth.clip_noise",
      "synth.shots",      "synth.seed"};
  return k;
}

inline Config synth_to_config(const SynthConfig& s) {
  Config c;
  c.set("synth.image_size", s.image_size);
  c.set_list("synth.stage_grids", s.stage_grids);
  c.set_list("synth.stage_layers", s.stage_layers);
  c.set("synth.feature_dim", s.feature_dim);
  c.set("synth.text_dim", s.text_dim);
  c.set("synth.clip_grid", s.clip_grid);
  c.set("synth.appearance_dim", s.appearance_dim);
  c.set("synth.num_classes", s.num_classes);
  c.set("synth.num_folds", s.num_folds);
  c.set("synth.min_shapes", s.min_shapes);
  c.set("synth.max_shapes", s.max_shapes);
  c.set("synth.min_area", s.min_area);
  c.set("synth.max_area", s.max_area);
  c.set("synth.feature_noise", s.feature_noise);
  c.set("synth.clip_noise", s.clip_noise);
  c.set("synth.shots", s.shots);
  c.set("synth.seed", s.seed);
  return c;
}

inline SynthConfig synth_from_config(const Config& c) {
  SynthConfig s;
  s.image_size = c.get("synth.image_size", s.image_size);
  s.stage_grids = c.get_list("synth.stage_grids", s.stage_grids);
  s.stage_layers = c.get_list("synth.stage_layers", s.stage_layers);
  s.feature_dim = c.get("synth.feature_dim", s.feature_dim);
  s.text_dim = c.get("synth.text_dim", s.text_dim);
  s.clip_grid = c.get("synth.clip_grid", s.clip_grid);
  s.appearance_dim = c.get("synth.appearance_dim", s.appearance_dim);
  s.num_classes = c.get("synth.num_classes", s.num_classes);
  s.num_folds = c.get("synth.num_folds", s.num_folds);
  s.min_shapes = c.get("synth.min_shapes", s.min_shapes);
  s.max_shapes = c.get("synth.max_shapes", s.max_shapes);
  s.min_area = c.get("synth.min_area", s.min_area);
  s.max_area = c.get("synth.max_area", s.max_area);
  s.feature_noise = c.get("synth.feature_noise", s.feature_noise);
  s.clip_noise = c.get("synth.clip_noise", s.clip_noise);
  s.shots = c.get("synth.shots", s.shots);
  s.seed = c.get("synth.seed", s.seed);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;

  static std::set<std::string> known_keys() {
    std::set<std::string> k = synth_keys();
    k.insert(ModelConfig::keys().begin(), ModelConfig::keys().end());
    k.insert(TrainConfig::keys().begin(), TrainConfig::keys().end());
    return k;
  }

  // Model geometry follows the synthetic world unless set explicitly.
  static RunConfig resolve(const Config& c) {
    c.require_known(known_keys());
    RunConfig r;
    r.synth = synth_from_config(c);
    Config mc = c;
    auto inherit = [&](const char* mkey, const char* skey) {
      if (!mc.has(mkey) && c.has(skey)) mc.set(mkey, c.get_string(skey, ""));
    };
    inherit("model.image_size", "synth.image_size");
    inherit("model.stage_grids", "synth.stage_grids");
    inherit("model.stage_layers", "synth.stage_layers");
    inherit("model.feature_dim", "synth.feature_dim");
    r.model = ModelConfig::from_config(mc);
    r.train = TrainConfig::from_config(c);
    return r;
  }

  Config to_config() const {
    Config c = synth_to_config(synth);
    c.merge(model.to_config());
    c.merge(train.to_config());
    return c;
  }
};

// PGMA_SEED, when set, overrides train.seed.
inline void apply_seed_env(Config& c) {
  if (const char* s = std::getenv("PGMA_SEED"); s && *s) c.set("train.seed", std::string(s));
}

}  // namespace pgma::train
