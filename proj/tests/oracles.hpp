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

// Independent implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gsed/corpus.hpp"
#include "gsed/metrics.hpp"
#include "gsed/rng.hpp"

namespace gsed::testing {

struct BruteCounts {
  long tp = 0, fp = 0, fn = 0;
};

inline bool collar_ok(const corpus::EventInterval& r, const corpus::EventInterval& e,
                      const metrics::CollarConfig& c) {
  const double slack = 1e-9;
  const double off_tol = std::max(c.offset_collar_abs, c.offset_collar_rel * (r.offset - r.onset));
  return std::fabs(r.onset - e.onset) <= c.onset_collar + slack &&
         std::fabs(r.offset - e.offset) <= off_tol + slack;
}

// Tries every one-to-one assignment per class and keeps the largest.
inline std::vector<BruteCounts> brute_force_counts(const std::vector<corpus::EventInterval>& ref,
                                                   const std::vector<corpus::EventInterval>& est,
                                                   int n_classes, const metrics::CollarConfig& c) {
  std::vector<BruteCounts> out(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    std::vector<corpus::EventInterval> r, e;
    for (const auto& x : ref)
      if (x.class_id == k) r.push_back(x);
    for (const auto& x : est)
      if (x.class_id == k) e.push_back(x);
    std::vector<bool> used(e.size(), false);
    std::function<long(std::size_t)> best = [&](std::size_t i) -> long {
      if (i == r.size()) return 0;
      long b = best(i + 1);
      for (std::size_t j = 0; j < e.size(); ++j) {
        if (used[j] || !collar_ok(r[i], e[j], c)) continue;
        used[j] = true;
        b = std::max(b, 1 + best(i + 1));
        used[j] = false;
      }
      return b;
    };
    const long tp = best(0);
    out[k] = {tp, static_cast<long>(e.size()) - tp, static_cast<long>(r.size()) - tp};
  }
  return out;
}

// Small scene: up to max_per_class events per class near a shared set of
// anchors so that collars overlap often.
inline std::vector<corpus::EventInterval> random_scene(Rng& rng, int n_classes, int max_per_class,
                                                       double jitter) {
  std::vector<corpus::EventInterval> ev;
  for (int c = 0; c < n_classes; ++c) {
    const int n = static_cast<int>(rng.uniform_int(0, max_per_class));
    for (int i = 0; i < n; ++i) {
      const double on = std::round(rng.uniform(0.0, 2.0) / 0.05) * 0.05 + rng.uniform(-jitter, jitter);
      const double len = std::round(rng.uniform(0.1, 1.5) / 0.05) * 0.05 + rng.uniform(-jitter, jitter);
      ev.push_back({c, std::max(0.0, on), std::max(0.0, on) + std::max(0.05, len)});
    }
  }
  return ev;
}

}  // namespace gsed::testing

#include "gsed/trainer.hpp"

namespace gsed::testing {

// Two labeled and two unlabeled clips, two classes, fixed probabilities.
struct HandBatch {
  nets::ModelOutputs ps, pt;
  train::BatchLabels labels;
  // Expected sums, written out term by term.
  double l_lPS, l_lPT, l_unsup, l_unsup_prime;
};

inline HandBatch hand_batch() {
  auto f = [](double x) { return static_cast<double>(static_cast<float>(x)); };
  using std::log;
  HandBatch h;
  auto fill = [](nets::ModelOutputs& o, std::vector<float> probs) {
    o.batch = 4;
    o.frames = 1;
    o.classes = 2;
    o.clip_probs = probs;
    o.frame_probs = probs;
  };
  fill(h.ps, {0.8f, 0.3f, 0.4f, 0.6f, 0.7f, 0.2f, 0.45f, 0.55f});
  fill(h.pt, {0.9f, 0.1f, 0.2f, 0.7f, 0.6f, 0.5f, 0.3f, 0.35f});
  h.labels.weak_mask = {1, 1, 0, 0};
  h.labels.tags = MatrixF(4, 2);
  h.labels.tags(0, 0) = 1.0f;
  h.labels.tags(1, 1) = 1.0f;
  // Labeled: clip 0 tags (1, 0), clip 1 tags (0, 1).
  h.l_lPS = 0.25 * ((-log(f(0.8)) - log(1 - f(0.3))) / 2 + (-log(1 - f(0.4)) - log(f(0.6))) / 2);
  h.l_lPT = 0.25 * ((-log(f(0.9)) - log(1 - f(0.1))) / 2 + (-log(1 - f(0.2)) - log(f(0.7))) / 2);
  // Teacher tags at 0.5: clip 2 -> (1, 1) (0.5 counts), clip 3 -> (0, 0).
  h.l_unsup = 0.25 * ((-log(f(0.7)) - log(f(0.2))) / 2 + (-log(1 - f(0.45)) - log(1 - f(0.55))) / 2);
  // Student tags: clip 2 -> (1, 0), clip 3 -> (0, 1).
  h.l_unsup_prime = 0.25 * ((-log(f(0.6)) - log(1 - f(0.5))) / 2 + (-log(1 - f(0.3)) - log(f(0.35))) / 2);
  return h;
}

}  // namespace gsed::testing
