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

#include "gsed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "gsed/error.hpp"

namespace gsed::metrics {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kSlack = 1e-9;

void check_interval(const EventInterval& e, int n_classes, const char* side) {
  if (e.class_id < 0 || e.class_id >= n_classes)
    throw ValidationError(std::string(side) + " event has class id " + std::to_string(e.class_id) +
                          " outside [0, " + std::to_string(n_classes) + ")");
  if (!std::isfinite(e.onset) || !std::isfinite(e.offset) || e.onset < 0.0 || e.onset >= e.offset)
    throw ValidationError(std::string(side) + " event needs 0 <= onset < offset");
}

// Kuhn's augmenting-path search.
bool augment(int r, const std::vector<std::vector<int>>& adj, std::vector<int>& est_owner,
             std::vector<char>& seen) {
  for (int e : adj[r]) {
    if (seen[e]) continue;
    seen[e] = 1;
    if (est_owner[e] < 0 || augment(est_owner[e], adj, est_owner, seen)) {
      est_owner[e] = r;
      return true;
    }
  }
  return false;
}

std::vector<std::size_t> onset_order(const std::vector<const EventInterval*>& ev) {
  std::vector<std::size_t> idx(ev.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (ev[a]->onset != ev[b]->onset) return ev[a]->onset < ev[b]->onset;
    return ev[a]->offset < ev[b]->offset;
  });
  return idx;
}

ordered_json score_json(const Score& s, const std::vector<std::string>& names) {
  ordered_json j;
  j["macro_f1"] = s.macro_f1;
  ordered_json per = ordered_json::array();
  for (std::size_t c = 0; c < s.counts.size(); ++c) {
    ordered_json e;
    e["class"] = c < names.size() ? names[c] : std::to_string(c);
    e["f1"] = s.class_f1[c];
    e["tp"] = s.counts[c].tp;
    e["fp"] = s.counts[c].fp;
    e["fn"] = s.counts[c].fn;
    e["scored"] = static_cast<bool>(s.scored[c]);
    per.push_back(e);
  }
  j["per_class"] = per;
  return j;
}

Score score_from_json(const json& j) {
  Score s;
  s.macro_f1 = j.at("macro_f1").get<double>();
  for (const auto& e : j.at("per_class")) {
    s.counts.push_back({e.at("tp").get<long>(), e.at("fp").get<long>(), e.at("fn").get<long>()});
    s.class_f1.push_back(e.at("f1").get<double>());
    s.scored.push_back(e.at("scored").get<bool>());
  }
  return s;
}

}  // namespace

void CollarConfig::validate() const {
  if (!(onset_collar >= 0.0) || !(offset_collar_abs >= 0.0) || !(offset_collar_rel >= 0.0))
    throw ConfigError("collars must be non-negative");
}

double ClassCounts::f1() const {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

bool admissible(const EventInterval& ref, const EventInterval& est, const CollarConfig& collars) {
  if (ref.class_id != est.class_id) return false;
  if (std::abs(ref.onset - est.onset) > collars.onset_collar + kSlack) return false;
  const double off_collar =
      std::max(collars.offset_collar_abs, collars.offset_collar_rel * ref.duration());
  return std::abs(ref.offset - est.offset) <= off_collar + kSlack;
}

std::vector<ClassCounts> match_events(const std::vector<EventInterval>& ref,
                                      const std::vector<EventInterval>& est, int n_classes,
                                      const CollarConfig& collars, MatchStrategy strategy) {
  for (const auto& e : ref) check_interval(e, n_classes, "reference");
  for (const auto& e : est) check_interval(e, n_classes, "estimated");
  std::vector<ClassCounts> counts(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    std::vector<const EventInterval*> r, s;
    for (const auto& e : ref)
      if (e.class_id == c) r.push_back(&e);
    for (const auto& e : est)
      if (e.class_id == c) s.push_back(&e);
    if (r.empty() && s.empty()) continue;
    const auto ro = onset_order(r), so = onset_order(s);
    std::vector<std::vector<int>> adj(r.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j)
        if (admissible(*r[ro[i]], *s[so[j]], collars)) adj[i].push_back(static_cast<int>(j));

    long tp = 0;
    std::vector<int> owner(s.size(), -1);
    if (strategy == MatchStrategy::kGreedy) {
      for (std::size_t i = 0; i < r.size(); ++i)
        for (int j : adj[i])
          if (owner[j] < 0) {
            owner[j] = static_cast<int>(i);
            ++tp;
            break;
          }
    } else {
      std::vector<char> seen(s.size());
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::fill(seen.begin(), seen.end(), 0);
        if (augment(static_cast<int>(i), adj, owner, seen)) ++tp;
      }
    }
    counts[c] = {tp, static_cast<long>(s.size()) - tp, static_cast<long>(r.size()) - tp};
  }
  return counts;
}

Score macro_score(const std::vector<ClassCounts>& counts, EmptyClassPolicy policy) {
  Score s;
  s.counts = counts;
  double sum = 0.0;
  int used = 0;
  for (const auto& c : counts) {
    s.class_f1.push_back(c.f1());
    const bool scored = policy == EmptyClassPolicy::kZero || !c.empty();
    s.scored.push_back(scored);
    if (scored) {
      sum += c.f1();
      ++used;
    }
  }
  s.macro_f1 = used == 0 ? 0.0 : sum / used;
  return s;
}

Score tagging_score(const BinaryMatrix& ref, const BinaryMatrix& pred, EmptyClassPolicy policy) {
  if (ref.rows != pred.rows || ref.cols != pred.cols)
    throw ValidationError("tagging: reference and prediction shapes differ");
  std::vector<ClassCounts> counts(ref.cols);
  for (int n = 0; n < ref.rows; ++n)
    for (int c = 0; c < ref.cols; ++c) {
      const bool r = ref(n, c) != 0, p = pred(n, c) != 0;
      if (r && p) ++counts[c].tp;
      else if (p) ++counts[c].fp;
      else if (r) ++counts[c].fn;
    }
  return macro_score(counts, policy);
}

double tagging_macro_f1(const BinaryMatrix& ref, const BinaryMatrix& pred, EmptyClassPolicy policy) {
  return tagging_score(ref, pred, policy).macro_f1;
}

Score event_score(const std::vector<std::vector<EventInterval>>& ref,
                  const std::vector<std::vector<EventInterval>>& est, int n_classes,
                  const CollarConfig& collars, MatchStrategy strategy, EmptyClassPolicy policy) {
  if (ref.size() != est.size()) throw ValidationError("event scoring: clip lists differ in length");
  collars.validate();
  std::vector<ClassCounts> total(n_classes);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const auto counts = match_events(ref[k], est[k], n_classes, collars, strategy);
    for (int c = 0; c < n_classes; ++c) total[c] += counts[c];
  }
  return macro_score(total, policy);
}

double event_based_macro_f1(const std::vector<std::vector<EventInterval>>& ref,
                            const std::vector<std::vector<EventInterval>>& est, int n_classes,
                            const CollarConfig& collars, MatchStrategy strategy,
                            EmptyClassPolicy policy) {
  return event_score(ref, est, n_classes, collars, strategy, policy).macro_f1;
}

RunStats aggregate_runs(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("aggregate_runs needs at least one value");
  RunStats s;
  s.n = static_cast<int>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_error = std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["config_hash"] = config_hash;
  j["corpus_id"] = corpus_id;
  j["mode"] = mode;
  j["run"] = run_name;
  j["split"] = split;
  j["system"] = system;
  j["n_clips"] = n_clips;
  j["tagging_macro_f1"] = tagging.macro_f1;
  j["event_macro_f1"] = events.macro_f1;
  for (const auto& [name, f1] : model_tagging_f1) j[name + "_tagging_f1"] = f1;
  j["classes"] = class_names;
  j["tagging"] = score_json(tagging, class_names);
  j["events"] = score_json(events, class_names);
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.corpus_id = j.at("corpus_id").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.run_name = j.at("run").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.system = j.at("system").get<std::string>();
  r.n_clips = j.at("n_clips").get<int>();
  r.class_names = j.at("classes").get<std::vector<std::string>>();
  r.tagging = score_from_json(j.at("tagging"));
  r.events = score_from_json(j.at("events"));
  for (const auto& [key, value] : j.items()) {
    const std::string suffix = "_tagging_f1";
    if (key.size() > suffix.size() && key.ends_with(suffix))
      r.model_tagging_f1.emplace_back(key.substr(0, key.size() - suffix.size()), value.get<double>());
  }
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  os << "# config_hash: " << config_hash << '\n';
  os << "run " << run_name << "  mode " << mode << "  split " << split << "  system " << system
     << "  clips " << n_clips << '\n';
  std::snprintf(buf, sizeof buf, "tagging macro F1  %.4f\nevent macro F1    %.4f\n", tagging.macro_f1,
                events.macro_f1);
  os << buf;
  for (const auto& [name, f1] : model_tagging_f1) {
    std::snprintf(buf, sizeof buf, "%s tagging F1  %.4f\n", name.c_str(), f1);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "\n%-14s %8s %6s %6s %6s %8s %6s %6s %6s\n", "class", "tag_f1", "tp",
                "fp", "fn", "event_f1", "tp", "fp", "fn");
  os << buf;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& t = tagging.counts[c];
    const auto& e = events.counts[c];
    std::snprintf(buf, sizeof buf, "%-14s %8.4f %6ld %6ld %6ld %8.4f %6ld %6ld %6ld\n",
                  class_names[c].c_str(), tagging.class_f1[c], t.tp, t.fp, t.fn, events.class_f1[c],
                  e.tp, e.fp, e.fn);
    os << buf;
  }
  return os.str();
}

}  // namespace gsed::metrics
