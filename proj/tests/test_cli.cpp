// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pgma/cli/commands.hpp"

using namespace pgma;
using namespace pgma::cli;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny = {
    "synth.image_size=12", "synth.stage_grids=6,3", "synth.stage_layers=1,1", "synth.feature_dim=4",
    "synth.text_dim=5",    "synth.clip_grid=3",     "synth.appearance_dim=4", "model.attn_width=8",
    "model.attn_heads=2",  "model.ffn_hidden=6",    "model.decoder_width=4",  "model.low_width=3",
    "train.steps=3",       "train.batch=2"};

ConfigArgs tiny(std::vector<std::string> extra = {}) {
  ConfigArgs a;
  a.overrides = kTiny;
  for (auto& e : extra) a.overrides.push_back(std::move(e));
  return a;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pgma_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// One trained tiny run shared by the command tests.
class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch("run");
    std::ostringstream log;
    cmd_synth(SynthArgs{tiny(), root_ / "data", 4, 6, 5}, log);
    cmd_synth(SynthArgs{tiny(), root_ / "data0", 1, 3, 0}, log);
    cmd_train(TrainArgs{tiny(), root_ / "model", {}, 0}, log);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static fs::path root_;
};
fs::path CliRun::root_;

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(RunConfigResolve, UnknownKeyRejected) {
  Config c;
  c.set("train.stpes", 10);
  EXPECT_THROW(train::RunConfig::resolve(c), ConfigError);
  EXPECT_THROW(resolve_config(tiny({"model.widht=3"})), ConfigError);
}

TEST(RunConfigResolve, FileThenOverrides) {
  const auto dir = scratch("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "# comment\ntrain.steps = 40\ntrain.lr = 0.002\n";
  ConfigArgs a;
  a.config_file = (dir / "run.cfg").string();
  a.overrides = {"train.steps=50"};
  const auto rc = train::RunConfig::resolve(resolve_config(a));
  EXPECT_EQ(rc.train.steps, 50u);
  EXPECT_EQ(rc.train.lr, 0.002);
  fs::remove_all(dir);
}

TEST(RunConfigResolve, ModelGeometryFollowsSynth) {
  const auto rc = train::RunConfig::resolve(resolve_config(tiny()));
  EXPECT_EQ(rc.model.stage_grids, (std::vector<std::size_t>{6, 3}));
  EXPECT_EQ(rc.model.feature_dim, 4u);
  EXPECT_EQ(rc.model.image_size, 12u);
}

TEST(RunConfigResolve, SeedEnvironmentOverride) {
  ::setenv("PGMA_SEED", "123", 1);
  const auto with = train::RunConfig::resolve(resolve_config(tiny({"train.seed=5"})));
  ::unsetenv("PGMA_SEED");
  const auto without = train::RunConfig::resolve(resolve_config(tiny({"train.seed=5"})));
  EXPECT_EQ(with.train.seed, 123u);
  EXPECT_EQ(without.train.seed, 5u);
}

TEST(RunConfigResolve, ResolvedTextRoundTripsWithSameHash) {
  const Config c = resolve_config(tiny());
  const Config back = Config::parse(c.text(), "round-trip");
  EXPECT_EQ(back.hash_hex(), c.hash_hex());
  std::ostringstream log;
  log_config(log, c);
  EXPECT_EQ(log.str().rfind("config hash " + c.hash_hex(), 0), 0u);
}

// ---------------------------------------------------------------------------
// Commands

TEST_F(CliRun, SynthWritesBaseAndNovelEpisodes) {
  EXPECT_EQ(episode_files(root_ / "data" / "train").size(), 4u);
  EXPECT_EQ(episode_files(root_ / "data" / "val").size(), 6u);
  const auto rc = train::RunConfig::resolve(resolve_config(tiny()));
  const auto novel = fold_split(rc.synth, 0).novel;
  for (const auto& f : episode_files(root_ / "data" / "val")) {
    const Episode ep = load_episode(f);
    EXPECT_NE(std::find(novel.begin(), novel.end(), ep.class_id), novel.end());
    EXPECT_EQ(ep.supports.size(), 5u);
  }
}

TEST_F(CliRun, TrainWritesCheckpointConfigAndCurve) {
  EXPECT_TRUE(fs::exists(root_ / "model" / "checkpoint.pgmc"));
  EXPECT_TRUE(fs::exists(root_ / "model" / "config.txt"));
  std::istringstream csv(slurp(root_ / "model" / "loss.csv"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(csv, line)) ++n;
  EXPECT_EQ(n, 4u);  // header + 3 steps
}

TEST_F(CliRun, ZeroShotEvalNeedsNoSupportRecords) {
  EvalArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.modes = {"zss"};
  a.data = root_ / "data0";
  std::ostringstream log;
  const auto rep = cmd_eval(a, log);
  ASSERT_EQ(rep.modes.size(), 1u);
  EXPECT_EQ(rep.modes[0].episodes, 3u);
  a.modes = {"fss"};
  EXPECT_THROW(cmd_eval(a, log), EpisodeError);
}

TEST_F(CliRun, FiveShotEvalUsesFiveSupports) {
  const auto ck = load_checkpoint<float>(root_ / "model" / "checkpoint.pgmc");
  PgmaModel<float> model(train::RunConfig::resolve(Config::parse(ck.config_text, "ck")).model, ck.params);
  std::size_t seen = 0;
  const auto files = episode_files(root_ / "data" / "val");
  for (const auto& f : files) {
    const Episode ep = select_shots(load_episode(f), 5);
    EXPECT_EQ(ep.supports.size(), 5u);
    seen += ep.supports.size();
  }
  EXPECT_EQ(seen, 5 * files.size());
  EvalArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.shots = 5;
  a.data = root_ / "data";
  a.modes = {"fss", "bbox"};
  a.records = root_ / "eval" / "five.jsonl";
  std::ostringstream log;
  const auto rep = cmd_eval(a, log);
  EXPECT_EQ(rep.shots, 5u);
  EXPECT_EQ(rep.modes.size(), 2u);
  a.data = root_ / "data0";
  EXPECT_THROW(cmd_eval(a, log), EpisodeError);
}

TEST_F(CliRun, EvalRecordsCarryFixedFields) {
  EvalArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.episodes = 6;
  a.modes = {"fss", "corrupt-mask:2"};
  a.records = root_ / "eval" / "rec.jsonl";
  std::ostringstream log;
  cmd_eval(a, log);
  std::istringstream is(slurp(a.records));
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* f : {"fold", "mode", "miou", "fbiou", "per_class", "seed", "config_hash"}) EXPECT_TRUE(j.contains(f)) << f;
    ++n;
  }
  EXPECT_EQ(n, 2u);
}

TEST_F(CliRun, EvalIsReproducible) {
  EvalArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.episodes = 8;
  a.modes = {"fss", "corrupt-image:3"};
  std::ostringstream log;
  const auto x = cmd_eval(a, log), y = cmd_eval(a, log);
  a.threads = 3;
  const auto z = cmd_eval(a, log);
  EXPECT_EQ(x.text(), y.text());
  EXPECT_EQ(x.text(), z.text());
}

TEST_F(CliRun, InvalidModeIsUsageError) {
  EvalArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.modes = {"fewshot"};
  std::ostringstream log;
  try {
    cmd_eval(a, log);
    FAIL();
  } catch (const CommandError& e) {
    EXPECT_EQ(e.category(), "usage");
  }
  a.modes = {"fss"};
  a.checkpoint = root_ / "missing.pgmc";
  EXPECT_THROW(cmd_eval(a, log), CommandError);
}

TEST_F(CliRun, InferOutputsAreBitIdenticalAcrossRuns) {
  InferArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.episodes = {root_ / "data" / "val" / episode_name(0), root_ / "data" / "val" / episode_name(1)};
  a.out = root_ / "infer1";
  std::ostringstream log;
  const auto first = cmd_infer(a, log);
  a.out = root_ / "infer2";
  const auto second = cmd_infer(a, log);
  ASSERT_EQ(first.size(), 4u);
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(slurp(first[i]), slurp(second[i])) << first[i];
    EXPECT_EQ(first[i].filename(), second[i].filename());
  }
  const std::string pgm = slurp(first[0]);
  EXPECT_EQ(pgm.rfind("P5\n12 12\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n12 12\n255\n").size() + 144);
}

TEST_F(CliRun, InferRejectsMalformedEpisode) {
  const fs::path bad = root_ / "bad.pgme";
  std::ofstream(bad) << "PGMExxxx";
  InferArgs a;
  a.checkpoint = root_ / "model" / "checkpoint.pgmc";
  a.episodes = {bad};
  a.out = root_ / "infer_bad";
  std::ostringstream log;
  EXPECT_THROW(cmd_infer(a, log), io::FormatError);
}

// ---------------------------------------------------------------------------
// Report

TEST(Report, AblationTableMatchesGoldenFile) {
  const fs::path data = PGMA_TEST_DATA;
  const std::string table = cmd_report({data / "ablation" / "baseline.jsonl", data / "ablation" / "param_free.jsonl",
                                        data / "ablation" / "full.jsonl"});
  EXPECT_EQ(table, slurp(data / "ablation_table.md"));
}

TEST(Report, RejectsRecordsMissingFields) {
  EXPECT_THROW(train::parse_records(R"({"fold":0,"mode":"fss","miou":1})", "x"), std::invalid_argument);
  EXPECT_THROW(train::parse_records("{not json", "x"), std::invalid_argument);
}
