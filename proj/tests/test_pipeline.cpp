/* Copyright 2026 The Guided SED Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gsed/config.hpp"
#include "gsed/error.hpp"
#include "gsed/pipeline.hpp"
#include "test_util.hpp"

using namespace gsed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

config::ExperimentConfig tiny(const fs::path& out) {
  config::ExperimentConfig c;
  c.output_dir = out.string();
  c.corpus.n_weak = 16;
  c.corpus.n_unlabeled = 24;
  c.corpus.n_test = 6;
  c.corpus.clip_seconds = 2.0;
  c.corpus.event_duration_max = 1.5;
  c.train.epochs = 2;
  c.train.start_epoch = 1;
  c.train.batch_size = 8;
  c.train.holdout_weak = 4;
  c.repeats = 1;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("gen-data is idempotent and guarded") {
  testing::TempDir dir("gen");
  auto cfg = tiny(dir.path());
  std::ostringstream log;
  const auto first = pipeline::cmd_gen_data(cfg, false, log);
  CHECK(first.regenerated);
  CHECK(first.records == 46u);
  const auto manifest = slurp(first.corpus_dir / "manifest.jsonl");

  const auto again = pipeline::cmd_gen_data(cfg, false, log);
  CHECK_FALSE(again.regenerated);
  CHECK(slurp(first.corpus_dir / "manifest.jsonl") == manifest);

  cfg.corpus.seed = 9;
  CHECK_THROWS_AS(pipeline::cmd_gen_data(cfg, false, log), UsageError);
  const auto forced = pipeline::cmd_gen_data(cfg, true, log);
  CHECK(forced.regenerated);
  CHECK(forced.corpus_id != first.corpus_id);
  const auto loaded = pipeline::load_corpus(cfg);
  CHECK(loaded.records.size() == 46u);
  CHECK(loaded.features.size() == 46u);
  CHECK(loaded.hop_seconds == doctest::Approx(0.02));
  CHECK(loaded.features.begin()->second.rows == 100);
}

TEST_CASE("run names") {
  CHECK(pipeline::run_name(train::TrainMode::kGuided, 0.999, 2) == "guided_g0.999_s2");
  CHECK(pipeline::run_name(train::TrainMode::kWeakOnlyPT, 0.999, 0) == "weak_only_pt_s0");
}

TEST_CASE("train, eval and report") {
  testing::TempDir dir("flow");
  auto cfg = tiny(dir.path());
  std::ostringstream log;
  pipeline::cmd_gen_data(cfg, false, log);

  cfg.repeats = 2;
  const auto runs = pipeline::cmd_train(cfg, false, log);
  REQUIRE(runs.size() == 2u);
  CHECK(runs[0].filename() == "guided_g0.999_s0");
  CHECK(runs[1].filename() == "guided_g0.999_s1");
  CHECK(fs::exists(runs[0] / "checkpoints/final/ps/weights.bin"));
  CHECK(fs::exists(runs[0] / "checkpoints/epoch_002/pt/meta.json"));
  CHECK_THROWS_AS(pipeline::cmd_train(cfg, false, log), UsageError);

  // The snapshot is the single-run config and reloads to the same hash.
  const auto snap = config::load_config(runs[0] / "config.txt");
  auto single = cfg;
  single.repeats = 1;
  CHECK(config::config_hash(snap) == config::config_hash(single));
  CHECK(slurp(runs[0] / "config.txt").rfind("# config_hash: " + config::config_hash(single), 0) == 0);

  const auto r1 = pipeline::cmd_eval(runs[0], 0, log);
  const auto j1 = slurp(runs[0] / "metrics.json");
  const auto r2 = pipeline::cmd_eval(runs[0], 0, log);
  CHECK(slurp(runs[0] / "metrics.json") == j1);
  CHECK(r1.tagging.macro_f1 >= 0.0);
  CHECK(r1.tagging.macro_f1 <= 1.0);
  CHECK(r1.events.macro_f1 >= 0.0);
  CHECK(r1.events.macro_f1 <= 1.0);
  CHECK(j1.find("\"ps_tagging_f1\"") != std::string::npos);
  CHECK(j1.find("\"pt_tagging_f1\"") != std::string::npos);
  CHECK(fs::exists(runs[0] / "events.tsv"));
  CHECK(fs::exists(runs[0] / "events.jsonl"));
  pipeline::cmd_eval(runs[0], 1, log);
  CHECK(fs::exists(runs[0] / "metrics_epoch_001.json"));
  pipeline::cmd_eval(runs[1], 0, log);

  auto weak_cfg = cfg;
  weak_cfg.train.mode = train::TrainMode::kWeakOnlyPT;
  weak_cfg.repeats = 1;
  const auto weak = pipeline::cmd_train(weak_cfg, false, log);
  pipeline::cmd_eval(weak[0], 0, log);
  std::ifstream elog(weak[0] / "epoch_log.jsonl");
  std::string line;
  std::getline(elog, line);
  while (std::getline(elog, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["loss"]["l_unsup"].get<double>() == 0.0);
  }

  const auto rows = pipeline::cmd_report({runs[0], runs[1], weak[0]}, dir.path(), log);
  REQUIRE(rows.size() == 2u);
  const auto& guided = rows[0].label == "guided_g0.999" ? rows[0] : rows[1];
  CHECK(guided.n_runs == 2);
  CHECK(fs::exists(dir.path() / "report.csv"));
  CHECK(fs::exists(dir.path() / "report.txt"));
  CHECK_THROWS_AS(pipeline::cmd_report({dir.path() / "nothing"}, dir.path(), log), UsageError);
}

TEST_CASE("untrained model evaluates to valid scores") {
  testing::TempDir dir("untrained");
  auto cfg = tiny(dir.path());
  cfg.train.epochs = 0;
  cfg.train.start_epoch = 0;
  cfg.train.mode = train::TrainMode::kWeakOnlyPS;
  std::ostringstream log;
  pipeline::cmd_gen_data(cfg, false, log);
  const auto runs = pipeline::cmd_train(cfg, false, log);
  const auto r = pipeline::cmd_eval(runs[0], 0, log);
  CHECK(r.tagging.macro_f1 >= 0.0);
  CHECK(r.tagging.macro_f1 <= 1.0);
  CHECK(r.events.macro_f1 >= 0.0);
  CHECK(r.events.macro_f1 <= 1.0);
}

}
