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

#include <optional>
#include <string>
#include <vector>

#include "gsed/corpus.hpp"
#include "gsed/tensor.hpp"
#include "json.hpp"

namespace gsed::metrics {

using corpus::EventInterval;

struct CollarConfig {
  double onset_collar = 0.200;       // seconds
  double offset_collar_abs = 0.200;  // seconds
  double offset_collar_rel = 0.20;   // fraction of the reference length
  void validate() const;
};

struct ClassCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ClassCounts&) const = default;
  // 2tp / (2tp + fp + fn), 0 when the denominator is 0.
  double f1() const;
  bool empty() const { return tp == 0 && fp == 0 && fn == 0; }
};

// kOptimal finds a maximum one-to-one matching per class (augmenting paths);
// kGreedy walks references in onset order and gives each the first unmatched
// admissible estimate in onset order. Greedy can leave a match on the table
// when an early reference grabs an estimate a later one needed.
enum class MatchStrategy { kOptimal, kGreedy };

// Classes with no references and no estimates anywhere in the scored set are
// left out of the macro mean (kDrop) or counted as F1 = 0 (kZero).
enum class EmptyClassPolicy { kDrop, kZero };

// Comparisons allow 1e-9 s of slack so times decoded from a frame grid
// (k * 0.02) are not rejected by rounding.
bool admissible(const EventInterval& ref, const EventInterval& est, const CollarConfig& collars);

// Per-class counts for one clip. Throws ValidationError on malformed
// intervals or class ids outside [0, n_classes).
std::vector<ClassCounts> match_events(const std::vector<EventInterval>& ref,
                                      const std::vector<EventInterval>& est, int n_classes,
                                      const CollarConfig& collars = {},
                                      MatchStrategy strategy = MatchStrategy::kOptimal);

struct Score {
  double macro_f1 = 0.0;
  std::vector<ClassCounts> counts;
  std::vector<double> class_f1;
  std::vector<bool> scored;  // false for classes dropped from the mean
};

Score macro_score(const std::vector<ClassCounts>& counts, EmptyClassPolicy policy);

// ref and pred are N x C binary.
Score tagging_score(const BinaryMatrix& ref, const BinaryMatrix& pred,
                    EmptyClassPolicy policy = EmptyClassPolicy::kDrop);
double tagging_macro_f1(const BinaryMatrix& ref, const BinaryMatrix& pred,
                        EmptyClassPolicy policy = EmptyClassPolicy::kDrop);

// Counts are pooled over clips before the per-class F1.
Score event_score(const std::vector<std::vector<EventInterval>>& ref,
                  const std::vector<std::vector<EventInterval>>& est, int n_classes,
                  const CollarConfig& collars = {},
                  MatchStrategy strategy = MatchStrategy::kOptimal,
                  EmptyClassPolicy policy = EmptyClassPolicy::kDrop);
double event_based_macro_f1(const std::vector<std::vector<EventInterval>>& ref,
                            const std::vector<std::vector<EventInterval>>& est, int n_classes,
                            const CollarConfig& collars = {},
                            MatchStrategy strategy = MatchStrategy::kOptimal,
                            EmptyClassPolicy policy = EmptyClassPolicy::kDrop);

struct RunStats {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(n); 0 for a single run
  int n = 0;
};

RunStats aggregate_runs(const std::vector<double>& values);

// Scores of one evaluated run.
struct MetricsReport {
  std::string config_hash;
  std::string mode;
  std::string run_name;
  std::string split;
  std::string system;  // which network produced the events
  std::string corpus_id;
  std::vector<std::string> class_names;
  Score tagging;
  Score events;
  // Tagging F1 of each trained network of the run, keyed "ps", "pt", ...
  std::vector<std::pair<std::string, double>> model_tagging_f1;
  int n_clips = 0;

  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

}  // namespace gsed::metrics
