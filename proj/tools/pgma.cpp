// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// pgma: synth | train | eval | infer | report
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage, 3 config, 4 input/format.

#include <iostream>

#include <CLI11.hpp>

#include "pgma/cli/commands.hpp"

namespace {

void add_config_flags(CLI::App* app, pgma::cli::ConfigArgs& c) {
  app->add_option("-c,--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.overrides, "override, key=value (repeatable)");
}

int fail(const std::string& category, const std::string& msg, int code) {
  std::cerr << "pgma: error [" << category << "]: " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace pgma::cli;
  CLI::App app{"pgma: prior-guided few-shot segmentation on episode files"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic episode dataset");
  add_config_flags(synth, sa.config);
  synth->add_option("-o,--out", sa.out, "dataset root")->required();
  synth->add_option("--train-episodes", sa.train_episodes);
  synth->add_option("--val-episodes", sa.val_episodes);
  synth->add_option("--shots", sa.shots);

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train a model on base-fold episodes");
  add_config_flags(trn, ta.config);
  trn->add_option("-o,--out", ta.out, "run directory")->required();
  trn->add_option("--data", ta.data, "dataset root with train/*.pgme");
  trn->add_option("--threads", ta.threads, "worker threads per batch");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate on novel-fold episodes");
  add_config_flags(ev, ea.config);
  ev->add_option("--checkpoint", ea.checkpoint);
  ev->add_flag("--baseline", ea.baseline, "threshold the query textual prior instead of a model");
  ev->add_option("-m,--mode", ea.modes, "fss|zss|bbox|coseg|corrupt-mask:N|corrupt-image:N (repeatable)")
      ->delimiter(',');
  ev->add_option("--fold", ea.fold);
  ev->add_option("-k,--shots", ea.shots);
  ev->add_option("-n,--episodes", ea.episodes);
  ev->add_option("--seed", ea.seed);
  ev->add_option("--threads", ea.threads);
  ev->add_option("--data", ea.data, "dataset root with val/*.pgme");
  ev->add_option("--label", ea.label, "run label used by report");
  ev->add_option("--records", ea.records, "write JSON-lines records here");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "predict masks for episode files");
  inf->add_option("--checkpoint", ia.checkpoint)->required();
  inf->add_option("episodes", ia.episodes, "episode files")->required();
  inf->add_option("-m,--mode", ia.mode);
  inf->add_option("-o,--out", ia.out)->required();
  bool no_overlay = false;
  inf->add_flag("--no-overlay", no_overlay);

  std::vector<std::filesystem::path> records;
  std::filesystem::path report_out;
  auto* rep = app.add_subcommand("report", "aggregate evaluation records into one table");
  rep->add_option("records", records, "JSON-lines record files")->required();
  rep->add_option("-o,--out", report_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      cmd_synth(sa, std::cerr);
    } else if (*trn) {
      cmd_train(ta, std::cerr);
    } else if (*ev) {
      if (!ea.baseline && ea.checkpoint.empty()) return fail("usage", "eval needs --checkpoint or --baseline", 2);
      std::cout << cmd_eval(ea, std::cerr).text();
    } else if (*inf) {
      ia.overlay = !no_overlay;
      cmd_infer(ia, std::cerr);
    } else if (*rep) {
      const std::string table = cmd_report(records);
      if (report_out.empty()) {
        std::cout << table;
      } else {
        std::ofstream(report_out) << table;
      }
    }
  } catch (const CommandError& e) {
    return fail(e.category(), e.what(), e.category() == "usage" ? 2 : 4);
  } catch (const pgma::ConfigError& e) {
    return fail("config", e.what(), 3);
  } catch (const pgma::io::FormatError& e) {
    return fail(std::string("format/") + pgma::io::kind_name(e.kind()), e.what(), 4);
  } catch (const pgma::EpisodeError& e) {
    return fail("episode", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
