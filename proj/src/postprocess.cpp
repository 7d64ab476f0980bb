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

#include "gsed/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gsed/error.hpp"
#include "gsed/nets.hpp"
#include "json.hpp"

namespace gsed::postprocess {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(WindowRule r) { return r == WindowRule::kFixed ? "fixed" : "duration_adaptive"; }

WindowRule window_rule_from_string(const std::string& s) {
  if (s == "fixed") return WindowRule::kFixed;
  if (s == "duration_adaptive" || s == "adaptive") return WindowRule::kDurationAdaptive;
  throw ConfigError("unknown window rule '" + s + "'");
}

void SmoothingConfig::validate() const {
  auto ok = [](int w) { return w >= 1 && w % 2 == 1; };
  if (!ok(default_window)) throw ConfigError("smoothing default window must be odd and >= 1");
  for (int w : per_class_window)
    if (!ok(w)) throw ConfigError("smoothing windows must be odd and >= 1");
  if (!(duration_fraction > 0.0)) throw ConfigError("duration_fraction must be > 0");
}

std::vector<int> clip_prediction(std::span<const float> clip_probs, double alpha) {
  std::vector<int> out(clip_probs.size());
  for (std::size_t c = 0; c < clip_probs.size(); ++c) out[c] = clip_probs[c] >= alpha ? 1 : 0;
  return out;
}

BinaryMatrix frame_prediction(const MatrixF& frame_probs, std::span<const int> clip_pred, double beta) {
  if (static_cast<int>(clip_pred.size()) != frame_probs.cols)
    throw ValidationError("frame_prediction: class counts differ");
  BinaryMatrix out(frame_probs.rows, frame_probs.cols);
  for (int t = 0; t < frame_probs.rows; ++t)
    for (int c = 0; c < frame_probs.cols; ++c)
      out(t, c) = static_cast<double>(frame_probs(t, c)) * clip_pred[c] >= beta ? 1 : 0;
  return out;
}

BinaryMatrix binarize(const MatrixF& frame_probs, std::span<const float> clip_probs, double alpha,
                      double beta, int target_frames) {
  const auto pred = clip_prediction(clip_probs, alpha);
  if (target_frames > frame_probs.rows)
    return frame_prediction(nets::restore_frames(frame_probs, target_frames), pred, beta);
  return frame_prediction(frame_probs, pred, beta);
}

std::vector<int> median_smooth(std::span<const int> seq, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("median window must be odd and >= 1");
  const int T = static_cast<int>(seq.size());
  if (T == 0 || window == 1) return {seq.begin(), seq.end()};
  const int h = window / 2;
  if (h > T - 1)
    throw ConfigError("median window " + std::to_string(window) + " too long for " +
                      std::to_string(T) + " frames");
  auto at = [&](int i) {
    if (i < 0) i = -i - 1;
    if (i >= T) i = 2 * T - 1 - i;
    return seq[i] != 0 ? 1 : 0;
  };
  std::vector<int> out(T);
  int ones = 0;
  for (int i = -h; i <= h; ++i) ones += at(i);
  for (int t = 0; t < T; ++t) {
    out[t] = ones > h ? 1 : 0;
    ones += at(t + h + 1) - at(t - h);
  }
  return out;
}

BinaryMatrix median_smooth(const BinaryMatrix& binary, const std::vector<int>& windows) {
  if (static_cast<int>(windows.size()) != binary.cols)
    throw ConfigError("need one smoothing window per class");
  BinaryMatrix out(binary.rows, binary.cols);
  std::vector<int> col(binary.rows);
  for (int c = 0; c < binary.cols; ++c) {
    for (int t = 0; t < binary.rows; ++t) col[t] = binary(t, c);
    const auto s = median_smooth(col, windows[c]);
    for (int t = 0; t < binary.rows; ++t) out(t, c) = s[t];
  }
  return out;
}

std::vector<int> derive_windows(const std::vector<std::vector<double>>& durations_by_class,
                                double hop_seconds, double fraction, int fallback) {
  if (!(hop_seconds > 0.0)) throw ConfigError("hop_seconds must be > 0");
  std::vector<int> windows;
  for (auto d : durations_by_class) {
    if (d.empty()) {
      windows.push_back(fallback);
      continue;
    }
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    const double median = n % 2 == 1 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
    const double target = fraction * median / hop_seconds;
    // Ties between two odd neighbours go up; the slack absorbs quotients
    // such as 1.2 / 0.02 landing just below an even integer.
    const int w = 2 * static_cast<int>(std::floor(target / 2.0 + 1e-9)) + 1;
    windows.push_back(std::max(w, 1));
  }
  return windows;
}

std::vector<int> resolve_windows(const SmoothingConfig& cfg, int n_classes, double hop_seconds,
                                 const std::vector<std::vector<double>>& durations_by_class) {
  cfg.validate();
  if (cfg.rule == WindowRule::kDurationAdaptive) {
    auto d = durations_by_class;
    d.resize(n_classes);
    return derive_windows(d, hop_seconds, cfg.duration_fraction, cfg.default_window);
  }
  if (cfg.per_class_window.empty()) return std::vector<int>(n_classes, cfg.default_window);
  if (static_cast<int>(cfg.per_class_window.size()) != n_classes)
    throw ConfigError("per_class_window needs one entry per class");
  return cfg.per_class_window;
}

std::vector<EventInterval> decode_events(const BinaryMatrix& binary, double hop_seconds) {
  std::vector<EventInterval> events;
  for (int c = 0; c < binary.cols; ++c) {
    int start = -1;
    for (int t = 0; t <= binary.rows; ++t) {
      const bool on = t < binary.rows && binary(t, c) != 0;
      if (on && start < 0) start = t;
      if (!on && start >= 0) {
        events.push_back({c, start * hop_seconds, t * hop_seconds});
        start = -1;
      }
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const EventInterval& a, const EventInterval& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.class_id < b.class_id;
  });
  return events;
}

BinaryMatrix encode_events(const std::vector<EventInterval>& events, int frames, int n_classes,
                           double hop_seconds) {
  BinaryMatrix out(frames, n_classes);
  constexpr double kEps = 1e-9;
  for (const auto& e : events) {
    if (e.class_id < 0 || e.class_id >= n_classes) throw ValidationError("event class out of range");
    const int t0 = std::max(0, static_cast<int>(std::ceil(e.onset / hop_seconds - kEps)));
    const int t1 = std::min(frames, static_cast<int>(std::floor(e.offset / hop_seconds + kEps)));
    for (int t = t0; t < t1; ++t) out(t, e.class_id) = 1;
  }
  return out;
}

void write_events_jsonl(const std::filesystem::path& path, const std::vector<ClipEvents>& clips,
                        const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << ordered_json{{"config_hash", config_hash}}.dump() << '\n';
  for (const auto& clip : clips) {
    ordered_json j;
    j["clip_id"] = clip.clip_id;
    ordered_json ev = ordered_json::array();
    for (const auto& e : clip.events)
      ev.push_back(ordered_json{{"class", e.class_id}, {"onset", e.onset}, {"offset", e.offset}});
    j["events"] = ev;
    os << j.dump() << '\n';
  }
}

std::vector<ClipEvents> read_events_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<ClipEvents> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!j.contains("clip_id")) continue;  // header
      ClipEvents c{j.at("clip_id").get<std::string>(), {}};
      for (const auto& e : j.at("events"))
        c.events.push_back({e.at("class").get<int>(), e.at("onset").get<double>(), e.at("offset").get<double>()});
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_events_tsv(const std::filesystem::path& path, const std::vector<ClipEvents>& clips,
                      const std::vector<std::string>& class_names, const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "# config_hash: " << config_hash << '\n';
  os << "filename\tonset\toffset\tevent_label\n";
  char buf[64];
  for (const auto& clip : clips)
    for (const auto& e : clip.events) {
      std::snprintf(buf, sizeof buf, "\t%.3f\t%.3f\t", e.onset, e.offset);
      os << clip.clip_id << buf
         << (e.class_id < static_cast<int>(class_names.size()) ? class_names[e.class_id]
                                                              : std::to_string(e.class_id))
         << '\n';
    }
}

}  // namespace gsed::postprocess
