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

// guided_sed: data generation, training, evaluation and reporting.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsed/config.hpp"
#include "gsed/error.hpp"
#include "gsed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gsed;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> gamma;
  std::optional<int> repeats;
  std::string output_dir;
  bool force = false;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "corpus seed for gen-data, first training seed for train");
  cmd->add_option("--mode", a.mode, "guided | weak_only_pt | weak_only_ps | mean_teacher | guided_homogeneous");
  cmd->add_option("--gamma", a.gamma, "fine-tuning schedule base");
  cmd->add_option("--repeats", a.repeats, "training repeats");
  cmd->add_option("--output-dir", a.output_dir, "output root (default $GUIDED_SED_OUT or ./guided_sed_out)");
  cmd->add_flag("--force", a.force, "replace existing corpus or runs");
  auto* group = cmd->add_option_group("config keys", "any config key as --section.key VALUE");
  for (const auto& f : config::fields()) {
    group->add_option_function<std::string>(
        "--" + f.key, [&a, key = f.key](const std::string& v) { a.overrides[key] = v; }, f.help);
  }
}

config::ExperimentConfig resolve(const CommonArgs& a, bool seed_is_corpus) {
  auto cfg = a.config_path.empty() ? config::ExperimentConfig{} : config::load_config(a.config_path);
  for (const auto& [k, v] : a.overrides) config::set_value(cfg, k, v);
  if (a.seed) (seed_is_corpus ? cfg.corpus.seed : cfg.train.seed) = *a.seed;
  if (a.mode) cfg.train.mode = train::train_mode_from_string(*a.mode);
  if (a.gamma) cfg.train.gamma = *a.gamma;
  if (a.repeats) cfg.repeats = *a.repeats;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  cfg.validate();
  return cfg;
}

std::vector<fs::path> evaluated_runs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root / "runs")) return dirs;
  for (const auto& e : fs::directory_iterator(root / "runs"))
    if (fs::exists(e.path() / "metrics.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided learning for weakly labeled semi-supervised sound event detection"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, report_args;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus and cache features");
  add_common(gen, gen_args);

  auto* trn = app.add_subcommand("train", "train one mode for --repeats seeds");
  add_common(trn, train_args);

  std::vector<std::string> eval_dirs;
  int eval_epoch = 0;
  auto* evl = app.add_subcommand("eval", "score trained runs on the test split");
  add_common(evl, eval_args);
  evl->add_option("runs", eval_dirs, "run directories (default: every run under the output root)");
  evl->add_option("--epoch", eval_epoch, "score this epoch's checkpoint instead of the final one");

  std::vector<std::string> report_dirs;
  auto* rep = app.add_subcommand("report", "tabulate evaluated runs");
  add_common(rep, report_args);
  rep->add_option("runs", report_dirs, "run directories (default: every evaluated run under the output root)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (gen->parsed()) {
      pipeline::cmd_gen_data(resolve(gen_args, true), gen_args.force, std::cout);
    } else if (trn->parsed()) {
      const auto cfg = resolve(train_args, false);
      for (const auto& d : pipeline::cmd_train(cfg, train_args.force, std::cout))
        std::cout << "run directory " << d.string() << "\n";
    } else if (evl->parsed()) {
      const auto cfg = resolve(eval_args, false);
      std::vector<fs::path> dirs(eval_dirs.begin(), eval_dirs.end());
      if (dirs.empty()) {
        const fs::path root = cfg.resolved_output_dir() / "runs";
        if (fs::exists(root))
          for (const auto& e : fs::directory_iterator(root))
            if (fs::exists(e.path() / "run.json")) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
      }
      if (dirs.empty()) throw UsageError("no run directories to evaluate");
      for (const auto& d : dirs) pipeline::cmd_eval(d, eval_epoch, std::cout);
    } else if (rep->parsed()) {
      const auto cfg = resolve(report_args, false);
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      if (dirs.empty()) dirs = evaluated_runs(cfg.resolved_output_dir());
      pipeline::cmd_report(dirs, cfg.resolved_output_dir(), std::cout);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kRuntime);
  }
  return 0;
}
