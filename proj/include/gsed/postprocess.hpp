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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gsed/corpus.hpp"
#include "gsed/tensor.hpp"

namespace gsed::postprocess {

using corpus::EventInterval;

enum class WindowRule { kFixed, kDurationAdaptive };

std::string to_string(WindowRule r);
WindowRule window_rule_from_string(const std::string& s);

struct SmoothingConfig {
  WindowRule rule = WindowRule::kDurationAdaptive;
  std::vector<int> per_class_window;  // used by kFixed; empty = default_window everywhere
  double duration_fraction = 1.0 / 3.0;
  int default_window = 9;
  void validate() const;
};

// 1 where prob >= alpha.
std::vector<int> clip_prediction(std::span<const float> clip_probs, double alpha);
// (t, c) = 1 iff frame_probs(t, c) * clip_pred[c] >= beta.
BinaryMatrix frame_prediction(const MatrixF& frame_probs, std::span<const int> clip_pred, double beta);

// clip_prediction then frame_prediction. Frame maps shorter than
// target_frames (teacher outputs) are first restored to target_frames.
BinaryMatrix binarize(const MatrixF& frame_probs, std::span<const float> clip_probs, double alpha,
                      double beta, int target_frames = 0);

// Median filter of a binary sequence with mirrored edges (x[-1] = x[0],
// x[-2] = x[1]).
// window must be odd and at most 2T - 1.
std::vector<int> median_smooth(std::span<const int> seq, int window);
// Column c filtered with windows[c].
BinaryMatrix median_smooth(const BinaryMatrix& binary, const std::vector<int>& windows);

// Nearest odd integer to fraction * median duration (in frames) per class,
// ties upward, floored at 1; classes without events get fallback.
std::vector<int> derive_windows(const std::vector<std::vector<double>>& durations_by_class,
                                double hop_seconds, double fraction, int fallback = 9);

// Per-class windows for a smoothing config. durations_by_class feeds the
// adaptive rule.
std::vector<int> resolve_windows(const SmoothingConfig& cfg, int n_classes, double hop_seconds,
                                 const std::vector<std::vector<double>>& durations_by_class);

// Maximal runs of ones → (c, t0 * hop, (t1 + 1) * hop), sorted by onset then
// class.
std::vector<EventInterval> decode_events(const BinaryMatrix& binary, double hop_seconds);
// Frame t is active for an event when [t*hop, (t+1)*hop) lies inside it.
BinaryMatrix encode_events(const std::vector<EventInterval>& events, int frames, int n_classes,
                           double hop_seconds);

struct ClipEvents {
  std::string clip_id;
  std::vector<EventInterval> events;
  bool operator==(const ClipEvents&) const = default;
};

// JSONL: a header object {"config_hash": ...} then one object per clip.
void write_events_jsonl(const std::filesystem::path& path, const std::vector<ClipEvents>& clips,
                        const std::string& config_hash);
std::vector<ClipEvents> read_events_jsonl(const std::filesystem::path& path);
// TSV rows: clip_id, onset, offset, class_name after a "# config_hash:" line
// and a column header.
void write_events_tsv(const std::filesystem::path& path, const std::vector<ClipEvents>& clips,
                      const std::vector<std::string>& class_names, const std::string& config_hash);

}  // namespace gsed::postprocess
