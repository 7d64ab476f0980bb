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

#pragma once

// Commands behind the command-line tool. Each takes a fully resolved
// ExperimentConfig and works on the directory layout below.
//
//   <output_dir>/corpus/                     (or experiment.corpus_dir)
//     corpus.json                            corpus id, spec, feature config
//     manifest.jsonl  truth.jsonl
//     audio/<clip_id>.wav  features/<clip_id>.feat
//   <output_dir>/runs/<mode>_g<gamma>_s<seed>/
//     config.txt                             snapshot, reloadable with --config
//     run.json                               mode, seed, roles, config hash
//     epoch_log.jsonl
//     checkpoints/epoch_NNN/<role>/  checkpoints/final/<role>/
//     metrics.json  metrics.txt  events.jsonl  events.tsv   (after eval)
//   <output_dir>/report.csv  report.txt                      (after report)

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gsed/config.hpp"
#include "gsed/metrics.hpp"
#include "gsed/trainer.hpp"

namespace gsed::pipeline {

namespace fs = std::filesystem;

struct GenDataResult {
  fs::path corpus_dir;
  std::string corpus_id;
  bool regenerated = false;
  std::size_t records = 0;
};

// Idempotent: an existing corpus with the same id is left alone. A corpus
// with a different id is only replaced when force is set (UsageError
// otherwise).
GenDataResult cmd_gen_data(const config::ExperimentConfig& cfg, bool force, std::ostream& log);

// Feature matrices of a corpus keyed by clip id.
struct LoadedCorpus {
  std::string corpus_id;
  std::vector<corpus::ClipRecord> records;
  std::map<std::string, MatrixF> features;
  double hop_seconds = 0.0;
};
LoadedCorpus load_corpus(const config::ExperimentConfig& cfg);
// The returned clips point into c.features; c must outlive them.
train::TrainData train_data_from(const LoadedCorpus& c, const config::ExperimentConfig& cfg);

std::string run_name(train::TrainMode mode, double gamma, std::uint64_t seed);

// Runs cfg.repeats trainings with seeds train.seed + r. Existing finished
// run directories are refused unless force is set.
std::vector<fs::path> cmd_train(const config::ExperimentConfig& cfg, bool force, std::ostream& log);
// A single training run into run_dir.
fs::path train_one(const config::ExperimentConfig& cfg, const LoadedCorpus& corpus, const fs::path& run_dir,
                   std::ostream& log);

// Scores the final checkpoint (or epoch `epoch` when > 0) on the test split
// and writes metrics.json/.txt and events.jsonl/.tsv (suffixed _epoch_NNN
// for a specific epoch).
metrics::MetricsReport cmd_eval(const fs::path& run_dir, int epoch, std::ostream& log);

struct ReportRow {
  std::string label;
  int n_runs = 0;
  metrics::RunStats tagging;
  metrics::RunStats events;
  double best_event = 0.0;
  std::string best_run;
};

// Groups evaluated runs by mode (and gamma for guided modes). Refuses runs
// from different corpora. Writes report.csv and report.txt into out_dir.
std::vector<ReportRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir,
                                  std::ostream& log);

}  // namespace gsed::pipeline
