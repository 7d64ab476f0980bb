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

#include "gsed/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gsed/error.hpp"

namespace gsed::config {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  // Shortest representation that round-trips.
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto t = trim(v);
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto t = trim(v);
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto t = trim(v);
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename M>
Field dbl(std::string key, std::string help, M member) {
  return {key, std::move(help), [member](const ExperimentConfig& c) { return fmt_double(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename M>
Field integer(std::string key, std::string help, M member) {
  return {key, std::move(help), [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_int(key, v));
          }};
}

template <typename M>
Field seed(std::string key, std::string help, M member) {
  return {key, std::move(help), [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_u64(key, v); }};
}

std::vector<Field> build_fields() {
  using C = ExperimentConfig;
  std::vector<Field> f;
  f.push_back(integer("corpus.n_classes", "event classes", [](C& c) -> int& { return c.corpus.n_classes; }));
  f.push_back(integer("corpus.n_weak", "weakly labeled clips", [](C& c) -> int& { return c.corpus.n_weak; }));
  f.push_back(integer("corpus.n_unlabeled", "unlabeled clips", [](C& c) -> int& { return c.corpus.n_unlabeled; }));
  f.push_back(integer("corpus.n_test", "strongly labeled test clips", [](C& c) -> int& { return c.corpus.n_test; }));
  f.push_back(dbl("corpus.clip_seconds", "clip length (s)", [](C& c) -> double& { return c.corpus.clip_seconds; }));
  f.push_back(integer("corpus.polyphony_max", "max overlapping events", [](C& c) -> int& { return c.corpus.polyphony_max; }));
  f.push_back(dbl("corpus.event_duration_min", "shortest event (s)", [](C& c) -> double& { return c.corpus.event_duration_min; }));
  f.push_back(dbl("corpus.event_duration_max", "longest event (s)", [](C& c) -> double& { return c.corpus.event_duration_max; }));
  f.push_back(dbl("corpus.snr_min_db", "lowest event SNR (dB)", [](C& c) -> double& { return c.corpus.snr_min_db; }));
  f.push_back(dbl("corpus.snr_max_db", "highest event SNR (dB)", [](C& c) -> double& { return c.corpus.snr_max_db; }));
  f.push_back(integer("corpus.sample_rate", "sample rate (Hz)", [](C& c) -> int& { return c.corpus.sample_rate; }));
  f.push_back(seed("corpus.seed", "corpus generation seed", [](C& c) -> std::uint64_t& { return c.corpus.seed; }));

  f.push_back(dbl("features.frame_length_ms", "analysis frame (ms)", [](C& c) -> double& { return c.features.frame_length_ms; }));
  f.push_back(dbl("features.hop_fraction", "hop as a fraction of the frame", [](C& c) -> double& { return c.features.hop_fraction; }));
  f.push_back(integer("features.n_mels", "mel bands", [](C& c) -> int& { return c.features.n_mels; }));
  f.push_back(dbl("features.fmin", "lowest mel edge (Hz)", [](C& c) -> double& { return c.features.fmin; }));
  f.push_back(dbl("features.fmax", "highest mel edge (Hz), 0 = Nyquist", [](C& c) -> double& { return c.features.fmax; }));
  f.push_back(dbl("features.log_floor", "energy floor before the log", [](C& c) -> double& { return c.features.log_floor; }));

  f.push_back({"train.mode", "guided | weak_only_pt | weak_only_ps | mean_teacher | guided_homogeneous",
               [](const C& c) { return train::to_string(c.train.mode); },
               [](C& c, const std::string& v) { c.train.mode = train::train_mode_from_string(trim(v)); }});
  f.push_back(dbl("train.gamma", "fine-tuning schedule base", [](C& c) -> double& { return c.train.gamma; }));
  f.push_back(integer("train.start_epoch", "epoch after which the fine-tuning term starts", [](C& c) -> int& { return c.train.start_epoch; }));
  f.push_back(dbl("train.alpha", "clip threshold", [](C& c) -> double& { return c.train.alpha; }));
  f.push_back(dbl("train.beta", "frame threshold", [](C& c) -> double& { return c.train.beta; }));
  f.push_back(integer("train.epochs", "training epochs", [](C& c) -> int& { return c.train.epochs; }));
  f.push_back(integer("train.batch_size", "clips per batch", [](C& c) -> int& { return c.train.batch_size; }));
  f.push_back(dbl("train.labeled_fraction", "labeled share of a batch, 0 = global ratio", [](C& c) -> double& { return c.train.labeled_fraction; }));
  f.push_back(dbl("train.learning_rate", "Adam step size", [](C& c) -> double& { return c.train.learning_rate; }));
  f.push_back(seed("train.seed", "training seed", [](C& c) -> std::uint64_t& { return c.train.seed; }));
  f.push_back(integer("train.holdout_weak", "weak clips held out for the epoch log", [](C& c) -> int& { return c.train.holdout_weak; }));
  f.push_back(dbl("train.ema_decay", "mean teacher moving-average decay", [](C& c) -> double& { return c.train.ema_decay; }));
  f.push_back(integer("train.consistency_rampup", "mean teacher ramp-up epochs", [](C& c) -> int& { return c.train.consistency_rampup; }));
  f.push_back(dbl("train.mt_input_noise", "mean teacher input noise std", [](C& c) -> double& { return c.train.mt_input_noise; }));

  f.push_back({"smoothing.rule", "fixed | duration_adaptive",
               [](const C& c) { return postprocess::to_string(c.smoothing.rule); },
               [](C& c, const std::string& v) { c.smoothing.rule = postprocess::window_rule_from_string(trim(v)); }});
  f.push_back({"smoothing.per_class_window", "comma-separated odd windows for the fixed rule",
               [](const C& c) { return join(c.smoothing.per_class_window); },
               [](C& c, const std::string& v) {
                 c.smoothing.per_class_window = parse_int_list("smoothing.per_class_window", v);
               }});
  f.push_back(dbl("smoothing.duration_fraction", "adaptive window as a fraction of the median duration",
                  [](C& c) -> double& { return c.smoothing.duration_fraction; }));
  f.push_back(integer("smoothing.default_window", "fallback window (frames)", [](C& c) -> int& { return c.smoothing.default_window; }));

  f.push_back(dbl("collars.onset", "onset collar (s)", [](C& c) -> double& { return c.collars.onset_collar; }));
  f.push_back(dbl("collars.offset_abs", "absolute offset collar (s)", [](C& c) -> double& { return c.collars.offset_collar_abs; }));
  f.push_back(dbl("collars.offset_rel", "offset collar relative to the reference length",
                  [](C& c) -> double& { return c.collars.offset_collar_rel; }));

  f.push_back(integer("experiment.repeats", "training repeats (seeds seed..seed+repeats-1)", [](C& c) -> int& { return c.repeats; }));
  Field out{"experiment.output_dir", "output root", [](const C& c) { return c.output_dir; },
            [](C& c, const std::string& v) { c.output_dir = trim(v); }, false};
  f.push_back(out);
  Field corp{"experiment.corpus_dir", "corpus location (default <output_dir>/corpus)",
             [](const C& c) { return c.corpus_dir; }, [](C& c, const std::string& v) { c.corpus_dir = trim(v); },
             false};
  f.push_back(corp);
  return f;
}

}  // namespace

void ExperimentConfig::validate() const {
  corpus.validate();
  features.validate(corpus.sample_rate);
  train.validate();
  smoothing.validate();
  collars.validate();
  if (repeats < 1) throw ConfigError("experiment.repeats must be >= 1");
  if (!smoothing.per_class_window.empty() &&
      static_cast<int>(smoothing.per_class_window.size()) != corpus.n_classes)
    throw ConfigError("smoothing.per_class_window needs one entry per class");
}

fs::path ExperimentConfig::resolved_output_dir() const {
  if (!output_dir.empty()) return output_dir;
  if (const char* env = std::getenv("GUIDED_SED_OUT"); env != nullptr && *env != '\0') return env;
  return "guided_sed_out";
}

fs::path ExperimentConfig::resolved_corpus_dir() const {
  if (!corpus_dir.empty()) return corpus_dir;
  return resolved_output_dir() / "corpus";
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string get_value(const ExperimentConfig& cfg, const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string sec = f.key.substr(0, f.key.find('.'));
    if (sec != section) {
      if (!section.empty()) out += '\n';
      section = sec;
    }
    out += f.key + " = " + f.get(cfg) + '\n';
  }
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::string canon = std::string("generator=") + corpus::kGeneratorVersion + "\n";
  for (const auto& f : fields())
    if (f.hashed) canon += f.key + "=" + f.get(cfg) + "\n";
  return fnv1a_hex(canon);
}

std::string corpus_id(const ExperimentConfig& cfg) {
  std::string canon;
  for (const auto& f : fields())
    if (f.key.starts_with("corpus.") || f.key.starts_with("features.")) canon += f.key + "=" + f.get(cfg) + "\n";
  return fnv1a_hex(canon);
}

}  // namespace gsed::config
