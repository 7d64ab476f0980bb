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

#include "gsed/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "gsed/error.hpp"
#include "gsed/parallel.hpp"
#include "json.hpp"

namespace gsed::corpus {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kBackgroundRms = 0.01;
constexpr double kFadeSeconds = 0.01;
constexpr double kSameClassGap = 0.2;
constexpr int kPlacementAttempts = 64;

std::uint64_t split_salt(Split s) {
  switch (s) {
    case Split::kWeak: return 1;
    case Split::kUnlabeled: return 2;
    case Split::kTest: return 3;
  }
  return 0;
}

void normalize_rms(std::vector<float>& x, double target) {
  double e = 0.0;
  for (float v : x) e += static_cast<double>(v) * v;
  const double rms = std::sqrt(e / std::max<std::size_t>(1, x.size()));
  if (rms <= 0.0) return;
  const double g = target / rms;
  for (float& v : x) v = static_cast<float>(v * g);
}

std::vector<float> pink_noise(std::size_t n, Rng& rng) {
  std::vector<float> out(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double white = rng.normal();
    b0 = 0.99886 * b0 + white * 0.0555179;
    b1 = 0.99332 * b1 + white * 0.0750759;
    b2 = 0.96900 * b2 + white * 0.1538520;
    b3 = 0.86650 * b3 + white * 0.3104856;
    b4 = 0.55000 * b4 + white * 0.5329522;
    b5 = -0.7616 * b5 - white * 0.0168980;
    out[i] = static_cast<float>(b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362);
    b6 = white * 0.115926;
  }
  return out;
}

// RBJ band-pass biquad, applied in place.
void bandpass(std::vector<float>& x, double center, double q, int sr) {
  const double w0 = 2.0 * std::numbers::pi * center / sr;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (float& v : x) {
    const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = v;
    y2 = y1;
    y1 = y;
    v = static_cast<float>(y);
  }
}

// Unit-RMS rendering of one event of the given class. Frequencies are drawn
// per event, so a class is defined by its structure rather than its band:
// steady tone, logarithmic chirp spanning one to two octaves, band-limited
// noise burst, slowly amplitude-modulated tone (0.6-1.2 Hz, so one period
// spans 40-80 frames) and harmonic stack. Class ids beyond five reuse the
// templates with frequencies scaled by 1.25 per wrap.
std::vector<float> render_event(int class_id, std::size_t n, int sr, Rng& rng) {
  const int kind = class_id % 5;
  const double scale = std::pow(1.25, class_id / 5);
  std::vector<float> x(n);
  const double two_pi = 2.0 * std::numbers::pi;
  const double phase0 = rng.uniform(0.0, two_pi);
  auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, rng.uniform()); };
  const double nyquist_guard = 0.45 * sr;
  switch (kind) {
    case 0: {
      const double f = std::min(nyquist_guard, scale * log_uniform(500.0, 3000.0));
      for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>(std::sin(phase0 + two_pi * f * i / sr));
      break;
    }
    case 1: {
      const double f_start = scale * log_uniform(400.0, 3000.0);
      const double octaves = rng.uniform(1.0, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      const double f_end = std::clamp(f_start * std::pow(2.0, octaves), 150.0, nyquist_guard);
      const double dur = static_cast<double>(n) / sr;
      const double r = std::log(f_end / f_start) / dur;
      double phase = phase0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        x[i] = static_cast<float>(std::sin(phase));
        phase += two_pi * f_start * std::exp(r * t) / sr;
      }
      break;
    }
    case 2: {
      for (auto& v : x) v = static_cast<float>(rng.normal());
      const double center = std::min(nyquist_guard, scale * log_uniform(1000.0, 6000.0));
      bandpass(x, center, 2.0, sr);
      bandpass(x, center, 2.0, sr);
      break;
    }
    case 3: {
      const double f = std::min(nyquist_guard, scale * log_uniform(500.0, 3000.0));
      const double fm = rng.uniform(0.6, 1.2);
      const double mphase = rng.uniform(0.0, two_pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double env = 0.6 + 0.4 * std::cos(mphase + two_pi * fm * t);
        x[i] = static_cast<float>(env * std::sin(phase0 + two_pi * f * t));
      }
      break;
    }
    default: {
      const double f0 = scale * log_uniform(150.0, 400.0);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int h = 1; h <= 8; ++h) {
          if (f0 * h >= nyquist_guard) break;
          acc += std::sin(phase0 * h + two_pi * f0 * h * i / sr) / h;
        }
        x[i] = static_cast<float>(acc);
      }
      break;
    }
  }
  normalize_rms(x, 1.0);
  const auto fade = std::min<std::size_t>(n / 2, static_cast<std::size_t>(kFadeSeconds * sr));
  for (std::size_t i = 0; i < fade; ++i) {
    const auto g = static_cast<float>(0.5 - 0.5 * std::cos(std::numbers::pi * i / fade));
    x[i] *= g;
    x[n - 1 - i] *= g;
  }
  return x;
}

int active_at(const std::vector<EventInterval>& events, double t) {
  int n = 0;
  for (const auto& e : events)
    if (e.onset <= t && t < e.offset) ++n;
  return n;
}

bool placement_ok(const std::vector<EventInterval>& events, const EventInterval& c,
                  int polyphony_max) {
  for (const auto& e : events)
    if (e.class_id == c.class_id && c.onset < e.offset + kSameClassGap &&
        e.onset < c.offset + kSameClassGap)
      return false;
  // Polyphony peaks at an onset; check the candidate onset and every
  // existing onset inside the candidate.
  if (active_at(events, c.onset) + 1 > polyphony_max) return false;
  for (const auto& e : events)
    if (e.onset > c.onset && e.onset < c.offset && active_at(events, e.onset) + 1 > polyphony_max)
      return false;
  return true;
}

json record_to_json(const ClipRecord& r) {
  json j;
  j["clip_id"] = r.clip_id;
  j["split"] = to_string(r.split);
  j["audio_path"] = r.audio_path;
  if (!r.feature_path.empty()) j["feature_path"] = r.feature_path;
  if (r.tags) j["tags"] = *r.tags;
  if (r.events) {
    json ev = json::array();
    for (const auto& e : *r.events)
      ev.push_back({{"class", e.class_id}, {"onset", e.onset}, {"offset", e.offset}});
    j["events"] = ev;
  }
  return j;
}

[[noreturn]] void reject(const fs::path& path, int line, const std::string& clip_id,
                         const std::string& what) {
  std::ostringstream os;
  os << path.string() << ":" << line;
  if (!clip_id.empty()) os << " (clip_id " << clip_id << ")";
  os << ": " << what;
  throw ValidationError(os.str());
}

std::vector<ClipRecord> parse_records(const fs::path& path, int n_classes, bool truth) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<ClipRecord> out;
  std::string text;
  int line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      reject(path, line, "", std::string("malformed JSON: ") + e.what());
    }
    ClipRecord r;
    if (!j.contains("clip_id") || !j["clip_id"].is_string() || j["clip_id"].get<std::string>().empty())
      reject(path, line, "", "missing clip_id");
    r.clip_id = j["clip_id"].get<std::string>();
    try {
      r.split = split_from_string(j.value("split", std::string{}));
    } catch (const ValidationError& e) {
      reject(path, line, r.clip_id, e.what());
    }
    r.audio_path = j.value("audio_path", std::string{});
    r.feature_path = j.value("feature_path", std::string{});
    if (r.audio_path.empty() && r.feature_path.empty())
      reject(path, line, r.clip_id, "record has neither audio_path nor feature_path");
    if (j.contains("tags")) {
      std::vector<int> tags;
      for (const auto& t : j["tags"]) {
        if (!t.is_number_integer()) reject(path, line, r.clip_id, "non-integer tag");
        const int c = t.get<int>();
        if (c < 0 || c >= n_classes)
          reject(path, line, r.clip_id, "unknown class id " + std::to_string(c));
        tags.push_back(c);
      }
      std::sort(tags.begin(), tags.end());
      tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
      r.tags = tags;
    }
    if (j.contains("events")) {
      std::vector<EventInterval> events;
      for (const auto& e : j["events"]) {
        if (!e.contains("class") || !e.contains("onset") || !e.contains("offset"))
          reject(path, line, r.clip_id, "event needs class, onset and offset");
        EventInterval ev{e["class"].get<int>(), e["onset"].get<double>(), e["offset"].get<double>()};
        if (ev.class_id < 0 || ev.class_id >= n_classes)
          reject(path, line, r.clip_id, "unknown class id " + std::to_string(ev.class_id));
        if (!(ev.onset >= 0.0)) reject(path, line, r.clip_id, "negative onset");
        if (!(ev.onset < ev.offset))
          reject(path, line, r.clip_id, "event onset must precede offset");
        events.push_back(ev);
      }
      std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        return std::tie(a.onset, a.offset, a.class_id) < std::tie(b.onset, b.offset, b.class_id);
      });
      r.events = events;
    }
    if (!truth) {
      switch (r.split) {
        case Split::kWeak:
          if (!r.tags) reject(path, line, r.clip_id, "weak record is missing tags");
          if (r.events) reject(path, line, r.clip_id, "weak record must not carry events");
          break;
        case Split::kUnlabeled:
          if (r.tags || r.events)
            reject(path, line, r.clip_id, "unlabeled record must not carry labels");
          break;
        case Split::kTest:
          if (!r.events) reject(path, line, r.clip_id, "test record is missing events");
          if (r.tags && *r.tags != tag_union(*r.events))
            reject(path, line, r.clip_id, "test tags differ from the union of event classes");
          break;
      }
    } else if (!r.events) {
      reject(path, line, r.clip_id, "truth record is missing events");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::kWeak: return "weak";
    case Split::kUnlabeled: return "unlabeled";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "weak") return Split::kWeak;
  if (s == "unlabeled") return Split::kUnlabeled;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "'");
}

std::vector<int> tag_union(const std::vector<EventInterval>& events) {
  std::set<int> s;
  for (const auto& e : events) s.insert(e.class_id);
  return {s.begin(), s.end()};
}

std::vector<int> tag_vector(const std::vector<int>& class_ids, int n_classes) {
  std::vector<int> v(n_classes, 0);
  for (int c : class_ids) v.at(c) = 1;
  return v;
}

void CorpusSpec::validate() const {
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (n_weak < 0 || n_unlabeled < 0 || n_test < 0) throw ConfigError("clip counts must be >= 0");
  if (!(clip_seconds > 0.0)) throw ConfigError("clip_seconds must be positive");
  if (polyphony_max < 1) throw ConfigError("polyphony_max must be >= 1");
  if (!(event_duration_min > 0.0 && event_duration_min <= event_duration_max))
    throw ConfigError("event duration range must satisfy 0 < min <= max");
  if (event_duration_max > clip_seconds)
    throw ConfigError("event duration range exceeds the clip length");
  if (snr_min_db > snr_max_db) throw ConfigError("snr range is inverted");
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
}

std::pair<double, double> CorpusSpec::class_duration_range(int class_id) const {
  const double half = 0.5 * (event_duration_max - event_duration_min);
  const double step = n_classes > 1 ? static_cast<double>(class_id) / (n_classes - 1) : 0.0;
  const double lo = event_duration_min + half * step;
  return {lo, lo + half};
}

std::string clip_id_for(Split split, int index) {
  std::ostringstream os;
  os << to_string(split) << "_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

std::string class_name(int class_id) {
  static const char* const kNames[5] = {"tone", "chirp", "noise_burst", "am_tone", "harmonic"};
  std::string name = kNames[class_id % 5];
  if (class_id >= 5) name += "_" + std::to_string(class_id / 5);
  return name;
}

SyntheticClip generate_clip(const CorpusSpec& spec, Split split, int index) {
  spec.validate();
  Rng rng(child_seed(child_seed(spec.seed, split_salt(split)), static_cast<std::uint64_t>(index)));
  const int sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_seconds * sr));
  SyntheticClip clip;
  clip.audio.sample_rate = sr;
  clip.audio.samples = pink_noise(n, rng);
  normalize_rms(clip.audio.samples, kBackgroundRms);

  // 1-3 distinct classes per clip (mean 2), each with one or two events.
  const int k = static_cast<int>(std::min<std::int64_t>(rng.uniform_int(1, 3), spec.n_classes));
  std::vector<int> classes(spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c) classes[c] = c;
  std::shuffle(classes.begin(), classes.end(), rng.engine());
  classes.resize(k);

  const auto clip_ms = static_cast<std::int64_t>(std::llround(spec.clip_seconds * 1000.0));
  for (int c : classes) {
    const int n_events = rng.uniform() < 0.3 ? 2 : 1;
    const auto [lo, hi] = spec.class_duration_range(c);
    for (int e = 0; e < n_events; ++e) {
      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const auto dur_ms = rng.uniform_int(std::llround(lo * 1000.0), std::llround(hi * 1000.0));
        const auto onset_ms = rng.uniform_int(0, clip_ms - dur_ms);
        EventInterval cand{c, onset_ms / 1000.0, (onset_ms + dur_ms) / 1000.0};
        if (!placement_ok(clip.events, cand, spec.polyphony_max)) continue;
        clip.events.push_back(cand);
        break;
      }
    }
  }
  std::sort(clip.events.begin(), clip.events.end(), [](const auto& a, const auto& b) {
    return std::tie(a.onset, a.offset, a.class_id) < std::tie(b.onset, b.offset, b.class_id);
  });

  for (const auto& ev : clip.events) {
    const auto start = static_cast<std::size_t>(std::llround(ev.onset * sr));
    const auto stop = std::min(n, static_cast<std::size_t>(std::llround(ev.offset * sr)));
    auto x = render_event(ev.class_id, stop - start, sr, rng);
    const double snr = rng.uniform(spec.snr_min_db, spec.snr_max_db);
    const double gain = kBackgroundRms * std::pow(10.0, snr / 20.0);
    for (std::size_t i = start; i < stop; ++i)
      clip.audio.samples[i] += static_cast<float>(gain * x[i - start]);
  }
  for (float& v : clip.audio.samples) v = std::clamp(v, -1.0f, 1.0f);
  return clip;
}

GeneratedCorpus generate_synthetic_corpus(const CorpusSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir / "audio");
  struct Job {
    Split split;
    int index;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < spec.n_weak; ++i) jobs.push_back({Split::kWeak, i});
  for (int i = 0; i < spec.n_unlabeled; ++i) jobs.push_back({Split::kUnlabeled, i});
  for (int i = 0; i < spec.n_test; ++i) jobs.push_back({Split::kTest, i});

  std::vector<ClipRecord> manifest(jobs.size()), truth(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto clip = generate_clip(spec, jobs[j].split, jobs[j].index);
    const std::string id = clip_id_for(jobs[j].split, jobs[j].index);
    const std::string audio_rel = "audio/" + id + ".wav";
    features::write_wav((dir / audio_rel).string(), clip.audio);

    ClipRecord t{id, jobs[j].split, audio_rel, "", std::nullopt, clip.events};
    ClipRecord m{id, jobs[j].split, audio_rel, "", std::nullopt, std::nullopt};
    if (jobs[j].split == Split::kWeak) m.tags = tag_union(clip.events);
    if (jobs[j].split == Split::kTest) m.events = clip.events;
    manifest[j] = std::move(m);
    truth[j] = std::move(t);
  });

  GeneratedCorpus out;
  out.manifest_path = dir / "manifest.jsonl";
  out.truth_path = dir / "truth.jsonl";
  write_manifest(out.manifest_path, manifest);
  write_manifest(out.truth_path, truth);
  out.records = std::move(manifest);
  return out;
}

std::string record_to_json_line(const ClipRecord& r) { return record_to_json(r).dump(); }

void write_manifest(const fs::path& path, const std::vector<ClipRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& r : records) os << record_to_json_line(r) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<ClipRecord> load_manifest(const fs::path& path, int n_classes) {
  return parse_records(path, n_classes, false);
}

std::vector<ClipRecord> load_truth(const fs::path& path, int n_classes) {
  return parse_records(path, n_classes, true);
}

int Minibatch::labeled_count() const {
  return static_cast<int>(std::count(weak_mask.begin(), weak_mask.end(), 1));
}

Tensor stack_features(const std::vector<const MatrixF*>& clips) {
  if (clips.empty()) return {};
  const int T = clips.front()->rows, F = clips.front()->cols;
  Tensor x(static_cast<int>(clips.size()), T, F, 1);
  for (std::size_t b = 0; b < clips.size(); ++b) {
    if (clips[b]->rows != T || clips[b]->cols != F)
      throw ValidationError("feature matrices in one batch must share a shape");
    std::copy(clips[b]->data.begin(), clips[b]->data.end(), x.data.begin() + b * x.sample_size());
  }
  return x;
}

MinibatchSampler::MinibatchSampler(const std::vector<LabeledClip>* weak_pool,
                                   const std::vector<UnlabeledClip>* unlabeled_pool,
                                   int batch_size, double labeled_fraction, int n_classes,
                                   std::uint64_t seed)
    : weak_(weak_pool), unlabeled_(unlabeled_pool), batch_size_(batch_size),
      n_classes_(n_classes), rng_(seed) {
  if (batch_size < 1) throw SamplingError("batch_size must be >= 1");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0))
    throw SamplingError("labeled_fraction must lie in [0, 1]");
  labeled_per_batch_ = static_cast<int>(std::lround(batch_size * labeled_fraction));
  const int n_l = weak_ ? static_cast<int>(weak_->size()) : 0;
  const int n_u = unlabeled_ ? static_cast<int>(unlabeled_->size()) : 0;
  const int b_l = labeled_per_batch_, b_u = batch_size - labeled_per_batch_;
  if (b_l > n_l)
    throw SamplingError("batch needs " + std::to_string(b_l) + " labeled clips but the pool has " +
                        std::to_string(n_l));
  if (b_u > n_u)
    throw SamplingError("batch needs " + std::to_string(b_u) +
                        " unlabeled clips but the pool has " + std::to_string(n_u));
  batches_per_epoch_ = 0;
  if (b_l > 0) batches_per_epoch_ = std::max(batches_per_epoch_, (n_l + b_l - 1) / b_l);
  if (b_u > 0) batches_per_epoch_ = std::max(batches_per_epoch_, (n_u + b_u - 1) / b_u);
}

int MinibatchSampler::draw(Stream& s, int pool_size) {
  if (s.pos >= s.order.size()) {
    s.order.resize(pool_size);
    for (int i = 0; i < pool_size; ++i) s.order[i] = i;
    std::shuffle(s.order.begin(), s.order.end(), rng_.engine());
    s.pos = 0;
  }
  return s.order[s.pos++];
}

void MinibatchSampler::start_epoch() {
  weak_stream_ = {};
  unlabeled_stream_ = {};
}

std::pair<std::vector<int>, std::vector<int>> MinibatchSampler::next_indices() {
  std::vector<int> li, ui;
  for (int i = 0; i < labeled_per_batch_; ++i)
    li.push_back(draw(weak_stream_, static_cast<int>(weak_->size())));
  for (int i = 0; i < unlabeled_per_batch(); ++i)
    ui.push_back(draw(unlabeled_stream_, static_cast<int>(unlabeled_->size())));
  return {li, ui};
}

Minibatch MinibatchSampler::next() {
  const auto [li, ui] = next_indices();
  std::vector<const MatrixF*> feats;
  Minibatch mb;
  mb.tags = MatrixF(batch_size_, n_classes_, 0.0f);
  for (std::size_t k = 0; k < li.size(); ++k) {
    const auto& c = (*weak_)[li[k]];
    feats.push_back(c.features);
    mb.weak_mask.push_back(1);
    mb.clip_ids.push_back(c.clip_id);
    for (int j = 0; j < n_classes_; ++j) mb.tags(static_cast<int>(k), j) = static_cast<float>(c.tags[j]);
  }
  for (int idx : ui) {
    const auto& c = (*unlabeled_)[idx];
    feats.push_back(c.features);
    mb.weak_mask.push_back(0);
    mb.clip_ids.push_back(c.clip_id);
  }
  mb.inputs = stack_features(feats);
  return mb;
}

std::vector<std::vector<double>> event_durations_by_class(const std::vector<ClipRecord>& records,
                                                          int n_classes) {
  std::vector<std::vector<double>> out(n_classes);
  for (const auto& r : records)
    if (r.events)
      for (const auto& e : *r.events)
        if (e.class_id >= 0 && e.class_id < n_classes) out[e.class_id].push_back(e.duration());
  return out;
}

}  // namespace gsed::corpus
