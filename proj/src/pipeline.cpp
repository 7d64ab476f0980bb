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

#include "gsed/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gsed/error.hpp"
#include "gsed/features.hpp"
#include "gsed/nets.hpp"
#include "gsed/parallel.hpp"
#include "gsed/postprocess.hpp"
#include "json.hpp"

namespace gsed::pipeline {

using config::ExperimentConfig;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

std::string section_text(const ExperimentConfig& cfg, const std::string& prefix) {
  std::string out;
  for (const auto& f : config::fields())
    if (f.key.starts_with(prefix)) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string gamma_text(double gamma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", gamma);
  return buf;
}

bool is_guided(train::TrainMode m) {
  return m == train::TrainMode::kGuided || m == train::TrainMode::kGuidedHomogeneous;
}

std::string epoch_dir(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d", epoch);
  return buf;
}

void save_role(const fs::path& dir, nets::Network& net, int epoch, const std::string& rng_state,
               const std::string& hash, const std::string& role) {
  nets::CheckpointMeta meta;
  meta.spec = net.spec();
  meta.epoch = epoch;
  meta.rng_state = rng_state;
  meta.extra = {{"config_hash", hash}, {"role", role}};
  nets::save_checkpoint(dir / role, net, meta);
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// gen-data

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, bool force, std::ostream& log) {
  cfg.validate();
  GenDataResult res;
  res.corpus_dir = cfg.resolved_corpus_dir();
  res.corpus_id = config::corpus_id(cfg);
  const fs::path marker = res.corpus_dir / "corpus.json";
  if (fs::exists(marker)) {
    const json existing = read_json(marker);
    const std::string old_id = existing.value("corpus_id", std::string{});
    if (old_id == res.corpus_id) {
      res.records = existing.value("records", std::size_t{0});
      log << "corpus " << res.corpus_id << " already present in " << res.corpus_dir.string()
          << "; nothing to do\n";
      return res;
    }
    if (!force)
      throw UsageError(res.corpus_dir.string() + " holds corpus " + old_id + " (seed " +
                       std::to_string(existing.value("seed", std::uint64_t{0})) +
                       "); pass --force to replace it");
  }
  if (force) {
    for (const char* name : {"corpus.json", "manifest.jsonl", "truth.jsonl"}) fs::remove(res.corpus_dir / name);
    fs::remove_all(res.corpus_dir / "audio");
    fs::remove_all(res.corpus_dir / "features");
  }

  log << "generating " << cfg.corpus.n_weak << " weak, " << cfg.corpus.n_unlabeled << " unlabeled, "
      << cfg.corpus.n_test << " test clips into " << res.corpus_dir.string() << "\n";
  auto gen = corpus::generate_synthetic_corpus(cfg.corpus, res.corpus_dir);
  fs::create_directories(res.corpus_dir / "features");
  auto& records = gen.records;
  parallel_for(records.size(), [&](std::size_t i) {
    auto& r = records[i];
    const auto wav = features::read_wav((res.corpus_dir / r.audio_path).string());
    const auto mel = features::compute_log_mel(wav, cfg.features);
    r.feature_path = "features/" + r.clip_id + ".feat";
    features::write_feature_file((res.corpus_dir / r.feature_path).string(), mel);
  });
  corpus::write_manifest(gen.manifest_path, records);

  ordered_json meta;
  meta["corpus_id"] = res.corpus_id;
  meta["seed"] = cfg.corpus.seed;
  meta["records"] = records.size();
  meta["corpus"] = section_text(cfg, "corpus.");
  meta["features"] = section_text(cfg, "features.");
  write_text(marker, meta.dump(2) + "\n");
  res.records = records.size();
  res.regenerated = true;
  log << "wrote " << records.size() << " records, corpus id " << res.corpus_id << "\n";
  return res;
}

// ---------------------------------------------------------------------------
// corpus loading

LoadedCorpus load_corpus(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.resolved_corpus_dir();
  const fs::path marker = dir / "corpus.json";
  if (!fs::exists(marker))
    throw UsageError("no corpus at " + dir.string() + "; run gen-data first");
  const json meta = read_json(marker);
  LoadedCorpus c;
  c.corpus_id = meta.value("corpus_id", std::string{});
  if (c.corpus_id != config::corpus_id(cfg))
    throw ValidationError("corpus at " + dir.string() + " (id " + c.corpus_id +
                          ") was generated from a different corpus/feature configuration");
  c.records = corpus::load_manifest(dir / "manifest.jsonl", cfg.corpus.n_classes);
  std::vector<features::LogMelSpectrogram> mats(c.records.size());
  parallel_for(c.records.size(), [&](std::size_t i) {
    const auto& r = c.records[i];
    if (r.feature_path.empty()) throw ValidationError("record " + r.clip_id + " has no cached features");
    mats[i] = features::read_feature_file((dir / r.feature_path).string());
  });
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    if (i == 0) c.hop_seconds = mats[i].frame_hop_seconds;
    c.features.emplace(c.records[i].clip_id, std::move(mats[i].values));
  }
  return c;
}

train::TrainData train_data_from(const LoadedCorpus& c, const ExperimentConfig& cfg) {
  std::vector<corpus::LabeledClip> weak;
  std::vector<corpus::UnlabeledClip> unlabeled;
  const int C = cfg.corpus.n_classes;
  for (const auto& r : c.records) {
    const MatrixF* f = &c.features.at(r.clip_id);
    if (r.split == corpus::Split::kWeak) weak.push_back({r.clip_id, f, corpus::tag_vector(*r.tags, C)});
    else if (r.split == corpus::Split::kUnlabeled) unlabeled.push_back({r.clip_id, f});
  }
  return train::make_train_data(std::move(weak), std::move(unlabeled), cfg.train.holdout_weak, C);
}

// ---------------------------------------------------------------------------
// train

std::string run_name(train::TrainMode mode, double gamma, std::uint64_t seed) {
  std::string name = train::to_string(mode);
  if (is_guided(mode)) name += "_g" + gamma_text(gamma);
  return name + "_s" + std::to_string(seed);
}

fs::path train_one(const ExperimentConfig& cfg_in, const LoadedCorpus& corpus, const fs::path& run_dir,
                   std::ostream& log) {
  ExperimentConfig cfg = cfg_in;
  cfg.corpus_dir = fs::absolute(cfg.resolved_corpus_dir()).lexically_normal().string();
  cfg.validate();
  const std::string hash = config::config_hash(cfg);
  const auto [student_role, teacher_role] = train::role_names(cfg.train.mode);
  const std::string name = run_dir.filename().string();

  fs::create_directories(run_dir / "checkpoints");
  write_text(run_dir / "config.txt", "# config_hash: " + hash + "\n" + config::to_text(cfg));
  ordered_json run;
  run["name"] = name;
  run["mode"] = train::to_string(cfg.train.mode);
  run["gamma"] = cfg.train.gamma;
  run["seed"] = cfg.train.seed;
  run["config_hash"] = hash;
  run["corpus_id"] = corpus.corpus_id;
  run["roles"] = teacher_role ? json{student_role, *teacher_role} : json{student_role};
  run["sed_role"] = train::sed_role(cfg.train.mode);
  run["status"] = "running";
  write_text(run_dir / "run.json", run.dump(2) + "\n");

  const auto data = train_data_from(corpus, cfg);
  std::ofstream epoch_log(run_dir / "epoch_log.jsonl", std::ios::binary);
  epoch_log << ordered_json{{"config_hash", hash}}.dump() << '\n';

  train::TrainHooks hooks;
  hooks.on_epoch_end = [&](const train::EpochLog& e, nets::Network& student, nets::Network* teacher) {
    epoch_log << e.to_json().dump() << '\n';
    epoch_log.flush();
    const fs::path dir = run_dir / "checkpoints" / epoch_dir(e.epoch);
    save_role(dir, student, e.epoch, e.rng_state, hash, student_role);
    if (teacher) save_role(dir, *teacher, e.epoch, e.rng_state, hash, *teacher_role);
    log << name << " epoch " << e.epoch << "/" << cfg.train.epochs << "  loss " << fmt4(e.loss.total)
        << "  a " << fmt4(e.loss.a);
    for (const auto& [role, f1] : e.tagging_f1) log << "  " << role << "_tag_f1 " << fmt4(f1);
    log << "  (" << fmt4(e.wall_seconds) << " s)\n";
  };

  train::TrainResult result;
  try {
    result = train::train(data, cfg.train, hooks);
  } catch (const DivergenceError&) {
    run["status"] = "diverged";
    write_text(run_dir / "run.json", run.dump(2) + "\n");
    throw;
  }
  const int epochs = static_cast<int>(result.log.size());
  const std::string rng_state = result.log.empty() ? std::string{} : result.log.back().rng_state;
  const fs::path final_dir = run_dir / "checkpoints" / "final";
  save_role(final_dir, *result.student, epochs, rng_state, hash, student_role);
  if (result.teacher) save_role(final_dir, *result.teacher, epochs, rng_state, hash, *teacher_role);
  run["status"] = "complete";
  run["epochs"] = epochs;
  write_text(run_dir / "run.json", run.dump(2) + "\n");
  return run_dir;
}

std::vector<fs::path> cmd_train(const ExperimentConfig& cfg, bool force, std::ostream& log) {
  cfg.validate();
  const auto corpus = load_corpus(cfg);
  std::vector<fs::path> dirs;
  for (int r = 0; r < cfg.repeats; ++r) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.train.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
    run_cfg.repeats = 1;
    const fs::path dir =
        cfg.resolved_output_dir() / "runs" / run_name(cfg.train.mode, cfg.train.gamma, run_cfg.train.seed);
    if (fs::exists(dir / "run.json")) {
      if (!force)
        throw UsageError(dir.string() + " already exists; pass --force to retrain");
      fs::remove_all(dir);
    }
    log << "training " << dir.filename().string() << "\n";
    dirs.push_back(train_one(run_cfg, corpus, dir, log));
  }
  return dirs;
}

// ---------------------------------------------------------------------------
// eval

metrics::MetricsReport cmd_eval(const fs::path& run_dir, int epoch, std::ostream& log) {
  if (!fs::exists(run_dir / "run.json")) throw UsageError("no run at " + run_dir.string());
  const json run = read_json(run_dir / "run.json");
  ExperimentConfig cfg = config::load_config(run_dir / "config.txt");
  cfg.validate();
  const std::string hash = config::config_hash(cfg);
  const auto mode = train::train_mode_from_string(run.at("mode").get<std::string>());
  const auto [student_role, teacher_role] = train::role_names(mode);
  const std::string sed = train::sed_role(mode);
  const int C = cfg.corpus.n_classes, F = cfg.features.n_mels;

  const fs::path ckpt = run_dir / "checkpoints" / (epoch > 0 ? epoch_dir(epoch) : std::string("final"));
  if (!fs::exists(ckpt)) throw UsageError("missing checkpoint " + ckpt.string());
  std::vector<std::pair<std::string, nets::Network>> nets_by_role;
  const auto sspec = train::student_spec(cfg.train, C, F);
  nets_by_role.emplace_back(student_role, nets::load_checkpoint(ckpt / student_role, nullptr, &sspec));
  if (teacher_role) {
    const auto tspec = *train::teacher_spec(cfg.train, C, F);
    nets_by_role.emplace_back(*teacher_role, nets::load_checkpoint(ckpt / *teacher_role, nullptr, &tspec));
  }

  const auto corpus = load_corpus(cfg);
  std::vector<const corpus::ClipRecord*> test;
  std::vector<const MatrixF*> feats;
  for (const auto& r : corpus.records)
    if (r.split == corpus::Split::kTest) {
      test.push_back(&r);
      feats.push_back(&corpus.features.at(r.clip_id));
    }
  if (test.empty()) throw ValidationError("corpus has no test clips");
  const int N = static_cast<int>(test.size());
  const int T = feats.front()->rows;

  BinaryMatrix ref_tags(N, C);
  std::vector<std::vector<corpus::EventInterval>> ref_events(N);
  for (int n = 0; n < N; ++n) {
    ref_events[n] = *test[n]->events;
    for (int c : corpus::tag_union(ref_events[n])) ref_tags(n, c) = 1;
  }

  // Adaptive windows come from the weak split's sidecar durations.
  const auto truth = corpus::load_truth(cfg.resolved_corpus_dir() / "truth.jsonl", C);
  std::vector<corpus::ClipRecord> weak_truth;
  for (const auto& r : truth)
    if (r.split == corpus::Split::kWeak) weak_truth.push_back(r);
  const auto windows = postprocess::resolve_windows(cfg.smoothing, C, corpus.hop_seconds,
                                                    corpus::event_durations_by_class(weak_truth, C));

  metrics::MetricsReport report;
  report.config_hash = hash;
  report.corpus_id = corpus.corpus_id;
  report.mode = train::to_string(mode);
  report.run_name = run.at("name").get<std::string>();
  report.split = "test";
  report.system = sed;
  report.n_clips = N;
  for (int c = 0; c < C; ++c) report.class_names.push_back(corpus::class_name(c));

  std::vector<postprocess::ClipEvents> decoded;
  for (auto& [role, net] : nets_by_role) {
    const auto out = train::run_inference(net, feats);
    BinaryMatrix pred(N, C);
    for (int n = 0; n < N; ++n) {
      const auto p = train::clip_prediction(out.clip_vector(n), cfg.train.alpha);
      for (int c = 0; c < C; ++c) pred(n, c) = p[c];
    }
    const auto tag = metrics::tagging_score(ref_tags, pred);
    report.model_tagging_f1.emplace_back(role, tag.macro_f1);
    if (role != sed) continue;
    report.tagging = tag;
    std::vector<std::vector<corpus::EventInterval>> est(N);
    for (int n = 0; n < N; ++n) {
      const auto bin = postprocess::binarize(out.frame_matrix(n), out.clip_vector(n), cfg.train.alpha,
                                             cfg.train.beta, T);
      est[n] = postprocess::decode_events(postprocess::median_smooth(bin, windows), corpus.hop_seconds);
      decoded.push_back({test[n]->clip_id, est[n]});
    }
    report.events = metrics::event_score(ref_events, est, C, cfg.collars);
  }

  const std::string suffix = epoch > 0 ? "_" + epoch_dir(epoch) : "";
  write_text(run_dir / ("metrics" + suffix + ".json"), report.to_json().dump(2) + "\n");
  write_text(run_dir / ("metrics" + suffix + ".txt"), report.to_text());
  postprocess::write_events_jsonl(run_dir / ("events" + suffix + ".jsonl"), decoded, hash);
  postprocess::write_events_tsv(run_dir / ("events" + suffix + ".tsv"), decoded, report.class_names, hash);
  log << report.to_text();
  return report;
}

// ---------------------------------------------------------------------------
// report

std::vector<ReportRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir,
                                  std::ostream& log) {
  if (run_dirs.empty()) throw UsageError("report needs at least one evaluated run directory");
  struct Entry {
    std::string label, run, hash;
    double tagging, events;
  };
  std::vector<Entry> entries;
  std::string corpus_id;
  for (const auto& dir : run_dirs) {
    if (!fs::exists(dir / "metrics.json"))
      throw UsageError(dir.string() + " has no metrics.json; run eval first");
    const json run = read_json(dir / "run.json");
    const json m = read_json(dir / "metrics.json");
    const std::string cid = m.at("corpus_id").get<std::string>();
    if (corpus_id.empty()) corpus_id = cid;
    if (cid != corpus_id)
      throw ValidationError("runs come from different corpora (" + corpus_id + " vs " + cid + " in " +
                            dir.string() + "); their scores are not comparable");
    const auto mode = train::train_mode_from_string(run.at("mode").get<std::string>());
    std::string label = train::to_string(mode);
    if (is_guided(mode)) label += "_g" + gamma_text(run.at("gamma").get<double>());
    entries.push_back({label, run.at("name").get<std::string>(), m.at("config_hash").get<std::string>(),
                       m.at("tagging_macro_f1").get<double>(), m.at("event_macro_f1").get<double>()});
  }

  std::vector<ReportRow> rows;
  for (const auto& e : entries) {
    if (std::any_of(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.label == e.label; })) continue;
    std::vector<double> tag, ev;
    ReportRow row;
    row.label = e.label;
    row.best_event = -1.0;
    for (const auto& x : entries)
      if (x.label == e.label) {
        tag.push_back(x.tagging);
        ev.push_back(x.events);
        if (x.events > row.best_event) {
          row.best_event = x.events;
          row.best_run = x.run;
        }
      }
    row.n_runs = static_cast<int>(tag.size());
    row.tagging = metrics::aggregate_runs(tag);
    row.events = metrics::aggregate_runs(ev);
    rows.push_back(row);
  }

  std::string hashes;
  for (const auto& e : entries) hashes += (hashes.empty() ? "" : ",") + e.hash;
  const std::string header = "# config_hash: " + config::fnv1a_hex(hashes) + "\n# run_config_hashes: " + hashes +
                             "\n# corpus_id: " + corpus_id + "\n";

  std::ostringstream csv;
  csv << header;
  csv << "system,n_runs,tagging_f1_mean,tagging_f1_stderr,event_f1_mean,event_f1_stderr,best_event_f1,best_run\n";
  for (const auto& r : rows)
    csv << r.label << ',' << r.n_runs << ',' << fmt4(r.tagging.mean) << ',' << fmt4(r.tagging.std_error) << ','
        << fmt4(r.events.mean) << ',' << fmt4(r.events.std_error) << ',' << fmt4(r.best_event) << ','
        << r.best_run << '\n';

  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream txt;
  char buf[256];
  txt << header << "\nAverage over runs (mean +/- standard error)\n";
  std::snprintf(buf, sizeof buf, "%-*s %6s %18s %18s\n", static_cast<int>(w), "system", "runs", "audio tagging F1",
                "event-based F1");
  txt << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %6d %9.4f +/- %.4f %9.4f +/- %.4f\n", static_cast<int>(w), r.label.c_str(),
                  r.n_runs, r.tagging.mean, r.tagging.std_error, r.events.mean, r.events.std_error);
    txt << buf;
  }
  txt << "\nBest run\n";
  std::snprintf(buf, sizeof buf, "%-*s %14s  %s\n", static_cast<int>(w), "system", "event-based F1", "run");
  txt << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %14.4f  %s\n", static_cast<int>(w), r.label.c_str(), r.best_event,
                  r.best_run.c_str());
    txt << buf;
  }

  fs::create_directories(out_dir);
  write_text(out_dir / "report.csv", csv.str());
  write_text(out_dir / "report.txt", txt.str());
  log << txt.str();
  return rows;
}

}  // namespace gsed::pipeline
