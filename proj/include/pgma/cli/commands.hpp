// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand bodies of the pgma tool. Argument parsing lives in tools/.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pgma/core/checkpoint.hpp"
#include "pgma/episode/pgme.hpp"
#include "pgma/train/evaluate.hpp"

namespace pgma::cli {

namespace fs = std::filesystem;

// Error categories map to exit codes.
class CommandError : public std::runtime_error {
 public:
  CommandError(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

// File, then key=value overrides, then PGMA_SEED.
inline Config resolve_config(const ConfigArgs& a, Config base = {}) {
  if (!a.config_file.empty()) base.merge(Config::load(a.config_file));
  for (const auto& kv : a.overrides) base.apply_override(kv);
  train::apply_seed_env(base);
  return train::RunConfig::resolve(base).to_config();
}

inline void log_config(std::ostream& log, const Config& c) {
  log << "config hash " << c.hash_hex() << '\n';
  std::istringstream is(c.text());
  for (std::string line; std::getline(is, line);) log << "  " << line << '\n';
}

inline std::string episode_name(std::size_t i) {
  std::ostringstream os;
  os << "episode_" << std::setw(5) << std::setfill('0') << i << ".pgme";
  return os.str();
}

inline std::vector<fs::path> episode_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CommandError("io", "episode directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".pgme") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw CommandError("io", "no .pgme files in " + dir.string());
  return files;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  ConfigArgs config;
  fs::path out;
  std::size_t train_episodes = 200;
  std::size_t val_episodes = 100;
  std::size_t shots = 1;
};

inline void cmd_synth(const SynthArgs& a, std::ostream& log) {
  const Config c = resolve_config(a.config);
  log_config(log, c);
  const auto rc = train::RunConfig::resolve(c);
  SynthWorld world(rc.synth);
  const auto split = fold_split(rc.synth, rc.train.fold);
  EpisodeSampler train_s(world, split.base, rc.train.seed, "train");
  EpisodeSampler val_s(world, split.novel, rc.train.seed, "eval");
  for (std::size_t i = 0; i < a.train_episodes; ++i) save_episode(train_s.draw(i, a.shots), a.out / "train" / episode_name(i));
  for (std::size_t i = 0; i < a.val_episodes; ++i) save_episode(val_s.draw(i, a.shots), a.out / "val" / episode_name(i));
  std::ofstream(a.out / "config.txt") << c.text();
  log << "wrote " << a.train_episodes << " train and " << a.val_episodes << " val episodes to " << a.out.string() << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ConfigArgs config;
  fs::path out;   // run directory
  fs::path data;  // optional dataset root; synthesized on the fly otherwise
  std::size_t threads = 0;  // 0: keep train.threads
};

inline void cmd_train(const TrainArgs& a, std::ostream& log) {
  Config c = resolve_config(a.config);
  if (a.threads) c.set("train.threads", a.threads);
  log_config(log, c);
  const auto rc = train::RunConfig::resolve(c);
  SynthWorld world(rc.synth);
  train::EpisodeSource source;
  if (!a.data.empty()) {
    auto files = std::make_shared<std::vector<fs::path>>(episode_files(a.data / "train"));
    source = [files](std::uint64_t i) { return load_episode((*files)[i % files->size()]); };
  } else {
    source = train::base_source(world, rc.train.fold, rc.train.seed, rc.synth.shots);
  }
  PgmaModel<float> model(rc.model);
  fs::create_directories(a.out);
  std::ofstream(a.out / "config.txt") << c.text();
  train::TrainOutputs io{a.out / "checkpoint.pgmc", a.out / "loss.csv", c.text()};
  const std::size_t every = std::max<std::size_t>(1, rc.train.steps / 10);
  train::train(model, source, rc.train, io, [&](std::size_t step, const train::StepLoss& l) {
    if (step % every == 0 || step + 1 == rc.train.steps) {
      log << "step " << step << " loss " << std::setprecision(5) << l.total << " dice " << l.dice << " ce " << l.ce
          << '\n';
    }
  });
  log << "checkpoint " << io.checkpoint.string() << '\n';
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path checkpoint;  // empty with baseline
  bool baseline = false;
  std::vector<std::string> modes{"fss"};
  int fold = -1;            // -1: fold of the checkpoint config
  std::size_t shots = 0;    // 0: config default
  std::size_t episodes = 500;
  std::uint64_t seed = 2026;
  std::size_t threads = 1;
  fs::path data;            // optional dataset root: evaluates val/*.pgme
  std::string label;
  fs::path records;         // optional JSONL output
  ConfigArgs config;        // used for the baseline (no checkpoint)
};

inline Checkpoint<float> open_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw CommandError("io", "checkpoint not found: " + p.string());
  return load_checkpoint<float>(p);
}

inline train::EvalReport cmd_eval(const EvalArgs& a, std::ostream& log) {
  Config c;
  std::optional<PgmaModel<float>> model;
  if (a.baseline) {
    c = resolve_config(a.config);
  } else {
    auto ck = open_checkpoint(a.checkpoint);
    c = Config::parse(ck.config_text, a.checkpoint.string());
    const auto rc = train::RunConfig::resolve(c);
    model.emplace(rc.model, std::move(ck.params));
  }
  log_config(log, c);
  const auto rc = train::RunConfig::resolve(c);
  const int fold = a.fold >= 0 ? a.fold : rc.train.fold;
  const std::size_t shots = a.shots ? a.shots : rc.synth.shots;
  SynthWorld world(rc.synth);

  train::EvalReport rep;
  rep.label = a.label.empty() ? (a.baseline ? "baseline" : a.checkpoint.parent_path().filename().string()) : a.label;
  rep.fold = fold;
  rep.seed = a.seed;
  rep.config_hash = c.hash_hex();
  rep.shots = shots;

  for (const auto& ms : a.modes) {
    TaskMode mode;
    try {
      mode = TaskMode::parse(ms);
    } catch (const std::invalid_argument& e) {
      throw CommandError("usage", e.what());
    }
    train::EpisodeSource source;
    std::size_t n = a.episodes;
    if (!a.data.empty()) {
      auto files = std::make_shared<std::vector<fs::path>>(episode_files(a.data / "val"));
      n = std::min(n, files->size());
      const bool need_support = mode.uses_support();
      source = [files, shots, need_support](std::uint64_t i) {
        Episode ep = load_episode((*files)[i]);
        return need_support ? select_shots(std::move(ep), shots) : select_shots(std::move(ep), 0);
      };
    } else {
      source = train::novel_source(world, fold, a.seed, mode.uses_support() ? shots : 0);
    }
    train::EvalOptions opt{mode, n, shots, a.seed, std::max<std::size_t>(1, a.threads)};
    const train::Predictor pred = a.baseline ? train::clip_threshold_predictor() : train::model_predictor(*model);
    rep.modes.push_back(train::evaluate(pred, source, opt));
  }
  log << rep.text();
  if (!a.records.empty()) {
    if (a.records.has_parent_path()) fs::create_directories(a.records.parent_path());
    std::ofstream os(a.records);
    if (!os) throw CommandError("io", "cannot write " + a.records.string());
    os << rep.records();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  fs::path checkpoint;
  std::vector<fs::path> episodes;
  std::string mode = "fss";
  fs::path out;
  bool overlay = true;
};

inline void write_pgm(const fs::path& p, const Mask& m) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw CommandError("io", "cannot write " + p.string());
  os << "P5\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
  for (auto v : m.vec()) os.put(static_cast<char>(v ? 255 : 0));
}

// Textual prior as the gray background, predicted foreground tinted red.
inline void write_overlay(const fs::path& p, const Episode& ep, const Mask& m) {
  auto bg = prior::textual_prior<float>(ep.query.clip_visual, ep.text_embed, std::pair{ep.query.height, ep.query.width});
  std::ofstream os(p, std::ios::binary);
  if (!os) throw CommandError("io", "cannot write " + p.string());
  os << "P6\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    const int g = static_cast<int>(std::lround(bg.map[i] * 200.0f));
    const int r = m[i] ? std::min(255, g / 2 + 128) : g;
    const int gb = m[i] ? g / 2 : g;
    os.put(static_cast<char>(r)).put(static_cast<char>(gb)).put(static_cast<char>(gb));
  }
}

inline std::vector<fs::path> cmd_infer(const InferArgs& a, std::ostream& log) {
  auto ck = open_checkpoint(a.checkpoint);
  const Config c = Config::parse(ck.config_text, a.checkpoint.string());
  log_config(log, c);
  PgmaModel<float> model(train::RunConfig::resolve(c).model, std::move(ck.params));
  TaskMode mode;
  try {
    mode = TaskMode::parse(a.mode);
  } catch (const std::invalid_argument& e) {
    throw CommandError("usage", e.what());
  }
  fs::create_directories(a.out);
  std::vector<fs::path> written;
  for (const auto& f : a.episodes) {
    Episode ep = train::apply_mode(load_episode(f), mode, fnv1a(f.filename().string()));
    Graph<float> g;
    const Mask m = train::threshold_logits(model.forward(g, ep, {mode, nullptr}).logits.value());
    const fs::path mp = a.out / (f.stem().string() + "_mask.pgm");
    write_pgm(mp, m);
    written.push_back(mp);
    if (a.overlay) {
      const fs::path op = a.out / (f.stem().string() + "_overlay.ppm");
      write_overlay(op, ep, m);
      written.push_back(op);
    }
    log << f.string() << " -> " << mp.string() << '\n';
  }
  return written;
}

// ---------------------------------------------------------------------------
// report

inline std::string cmd_report(const std::vector<fs::path>& records) {
  std::vector<train::ReportRow> rows;
  for (const auto& p : records) {
    std::ifstream is(p);
    if (!is) throw CommandError("io", "cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    std::vector<train::ReportRow> parsed;
    try {
      parsed = train::parse_records(ss.str(), p.stem().string());
    } catch (const std::invalid_argument& e) {
      throw CommandError("format", p.string() + ": " + e.what());
    }
    for (auto& r : parsed) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const train::ReportRow& x) { return x.label == r.label; });
      if (it == rows.end()) rows.push_back(std::move(r));
      else for (const auto& [m, v] : r.miou) it->miou[m] = v;
    }
  }
  return train::format_table(rows);
}

}  // namespace pgma::cli
