// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task-mode evaluation and reports.

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pgma/model/model.hpp"
#include "pgma/prior/prior_adapter.hpp"
#include "pgma/train/corrupt.hpp"
#include "pgma/train/metrics.hpp"
#include "pgma/train/trainer.hpp"

namespace pgma::train {

// Maps an episode (already transformed for its mode) to (H, W) logits.
using Predictor = std::function<Tensor<float>(const Episode&)>;

template <typename T>
Predictor model_predictor(PgmaModel<T>& model) {
  return [&model](const Episode& ep) {
    Graph<T> g;
    ForwardOptions<T> opt{ep.mode, nullptr};
    return model.forward(g, ep, opt).logits.value().template cast<float>();
  };
}

// Query textual prior resampled to the image, thresholded at 0.5.
inline Predictor clip_threshold_predictor() {
  return [](const Episode& ep) {
    auto p = prior::textual_prior<float>(ep.query.clip_visual, ep.text_embed, std::pair{ep.query.height, ep.query.width});
    Tensor<float> logits(p.map.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = p.map[i] - 0.5f;
    return logits;
  };
}

struct EvalOptions {
  TaskMode mode;
  std::size_t episodes = 500;
  std::size_t shots = 1;
  std::uint64_t seed = 2026;
  std::size_t threads = 1;
};

struct ModeResult {
  std::string mode;
  double miou = 0;   // percent
  double fbiou = 0;  // percent
  std::map<int, double> per_class;  // percent
  std::size_t episodes = 0;
};

struct EvalReport {
  std::string label;
  int fold = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t shots = 1;
  std::vector<ModeResult> modes;

  std::string text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "run " << (label.empty() ? "-" : label) << "  fold " << fold << "  shots " << shots << "  seed " << seed
       << "  config " << config_hash << '\n';
    for (const auto& m : modes) {
      os << "  mode " << m.mode << ": mIoU " << m.miou << "  FB-IoU " << m.fbiou << "  episodes " << m.episodes << '\n';
      os << "    per-class:";
      for (const auto& [c, v] : m.per_class) os << ' ' << c << '=' << v;
      os << '\n';
    }
    return os.str();
  }

  // One JSON object per mode, one per line.
  std::string records() const {
    std::string out;
    for (const auto& m : modes) {
      nlohmann::ordered_json j;
      j["fold"] = fold;
      j["mode"] = m.mode;
      j["miou"] = m.miou;
      j["fbiou"] = m.fbiou;
      nlohmann::ordered_json pc = nlohmann::ordered_json::object();
      for (const auto& [c, v] : m.per_class) pc[std::to_string(c)] = v;
      j["per_class"] = pc;
      j["seed"] = seed;
      j["config_hash"] = config_hash;
      j["label"] = label;
      j["shots"] = shots;
      j["episodes"] = m.episodes;
      out += j.dump() + '\n';
    }
    return out;
  }
};

// Episodes are drawn by index, transformed for the mode with a per-index seed,
// predicted concurrently and accumulated in index order.
inline ModeResult evaluate(const Predictor& predict, const EpisodeSource& source, const EvalOptions& opt) {
  std::vector<Mask> preds(opt.episodes);
  std::vector<Episode> eps(opt.episodes);
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.threads, opt.episodes));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < opt.episodes; i += workers) {
        Episode ep = apply_mode(source(i), opt.mode, substream_seed(opt.seed, "eval.mode", i));
        if (!ep.query_mask) throw EpisodeError("evaluation episode has no query mask");
        preds[i] = threshold_logits(predict(ep));
        ep.supports.clear();
        ep.query = {};
        eps[i] = std::move(ep);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  IouAccumulator acc;
  for (std::size_t i = 0; i < opt.episodes; ++i) acc.add(eps[i].class_id, preds[i], *eps[i].query_mask);
  ModeResult r;
  r.mode = opt.mode.str();
  r.miou = 100.0 * acc.miou();
  r.fbiou = 100.0 * acc.fbiou();
  for (const auto& [c, v] : acc.per_class()) r.per_class[c] = 100.0 * v;
  r.episodes = acc.episodes();
  return r;
}

// Novel-fold episodes of the synthetic world.
inline EpisodeSource novel_source(const SynthWorld& world, int fold, std::uint64_t seed, std::size_t shots) {
  auto sampler = std::make_shared<EpisodeSampler>(world, fold_split(world.config(), fold).novel, seed, "eval");
  return [sampler, shots](std::uint64_t i) { return sampler->draw(i, shots); };
}

inline EpisodeSource base_source(const SynthWorld& world, int fold, std::uint64_t seed, std::size_t shots) {
  auto sampler = std::make_shared<EpisodeSampler>(world, fold_split(world.config(), fold).base, seed, "train");
  return [sampler, shots](std::uint64_t i) { return sampler->draw(i, shots); };
}

// ---------------------------------------------------------------------------
// Aggregation across runs: one row per run label, one column per mode.

struct ReportRow {
  std::string label;
  std::map<std::string, double> miou;  // mode -> mIoU
};

inline std::vector<ReportRow> parse_records(const std::string& jsonl, const std::string& fallback_label) {
  std::vector<ReportRow> rows;
  std::istringstream is(jsonl);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("malformed record: " + std::string(e.what()));
    }
    for (const char* f : {"fold", "mode", "miou", "fbiou", "per_class", "seed", "config_hash"}) {
      if (!j.contains(f)) throw std::invalid_argument(std::string("record lacks field ") + f);
    }
    std::string label = j.value("label", std::string());
    if (label.empty()) label = fallback_label;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.label == label; });
    if (it == rows.end()) {
      rows.push_back({label, {}});
      it = rows.end() - 1;
    }
    it->miou[j.at("mode").get<std::string>()] = j.at("miou").get<double>();
  }
  return rows;
}

// Markdown-style table; rows keep first-seen order, columns are sorted modes.
inline std::string format_table(const std::vector<ReportRow>& rows) {
  std::vector<std::string> modes;
  for (const auto& r : rows)
    for (const auto& [m, _] : r.miou)
      if (std::find(modes.begin(), modes.end(), m) == modes.end()) modes.push_back(m);
  std::sort(modes.begin(), modes.end());
  std::ostringstream os;
  os << "| run |";
  for (const auto& m : modes) os << ' ' << m << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < modes.size(); ++i) os << "---|";
  os << '\n' << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << "| " << r.label << " |";
    for (const auto& m : modes) {
      auto it = r.miou.find(m);
      if (it == r.miou.end()) os << " - |";
      else os << ' ' << it->second << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pgma::train
