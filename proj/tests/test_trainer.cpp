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

#include <cmath>

#include "doctest.h"
#include "gsed/error.hpp"
#include "gsed/trainer.hpp"
#include "oracles.hpp"
#include "train_fixture.hpp"

using namespace gsed;
using namespace gsed::train;

namespace {

bool same_logs(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].to_json(false).dump() != b[i].to_json(false).dump() || a[i].rng_state != b[i].rng_state)
      return false;
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("mode names") {
  for (auto m : {TrainMode::kGuided, TrainMode::kWeakOnlyPT, TrainMode::kWeakOnlyPS, TrainMode::kMeanTeacher,
                 TrainMode::kGuidedHomogeneous})
    CHECK(train_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(train_mode_from_string("semi"), UsageError);
  CHECK(role_names(TrainMode::kGuided).first == "ps");
  CHECK(*role_names(TrainMode::kGuided).second == "pt");
  CHECK_FALSE(role_names(TrainMode::kWeakOnlyPS).second);
  CHECK(sed_role(TrainMode::kMeanTeacher) == "teacher");
  CHECK(sed_role(TrainMode::kWeakOnlyPT) == "pt");
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.start_epoch = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.alpha = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("binary cross entropy") {
  const std::vector<double> t{1, 0, 1};
  CHECK(binary_cross_entropy(t, t) < 1e-6);
  CHECK(binary_cross_entropy(std::vector<double>{1}, std::vector<double>{0.5}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(4), p(4);
    long double want = 0.0L;
    for (int c = 0; c < 4; ++c) {
      y[c] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      p[c] = rng.uniform(0.01, 0.99);
      want -= y[c] * std::log(static_cast<long double>(p[c])) +
              (1 - y[c]) * std::log(1.0L - static_cast<long double>(p[c]));
    }
    CHECK(std::fabs(binary_cross_entropy(y, p) - static_cast<double>(want / 4)) < 1e-9);

    std::vector<double> g(4);
    binary_cross_entropy_grad(y, p, g);
    for (int c = 0; c < 4; ++c) {
      auto pp = p, pm = p;
      pp[c] += 1e-6;
      pm[c] -= 1e-6;
      const double num = (binary_cross_entropy(y, pp) - binary_cross_entropy(y, pm)) / 2e-6;
      CHECK(g[c] == doctest::Approx(num).epsilon(1e-5));
    }
  }
  // Clipped region: finite loss, no gradient.
  std::vector<double> g(1);
  CHECK(std::isfinite(binary_cross_entropy(std::vector<double>{1}, std::vector<double>{0.0})));
  binary_cross_entropy_grad(std::vector<double>{1}, std::vector<double>{0.0}, g);
  CHECK(g[0] == 0.0);
}

TEST_CASE("fine-tuning schedule") {
  CHECK(unsupervised_weight(5, 5, 0.997) == 0.0);
  CHECK(unsupervised_weight(6, 5, 0.997) == doctest::Approx(0.003).epsilon(1e-9));
  for (int e = 1; e <= 100; ++e) CHECK(unsupervised_weight(e, 5, 1.0) == 0.0);
  for (int e = 7; e <= 100; ++e)
    CHECK(unsupervised_weight(e, 5, 0.99) > unsupervised_weight(e - 1, 5, 0.99));
  CHECK_THROWS_AS(unsupervised_weight(0, 5, 0.99), ConfigError);
  CHECK(consistency_weight(30, 30) == 1.0);
  CHECK(consistency_weight(1, 30) == doctest::Approx(0.1 / (1 - std::pow(0.9, 30))));
}

TEST_CASE("guided losses on a hand-built batch") {
  const auto h = testing::hand_batch();
  TrainConfig cfg;
  GuidedGrads g;
  const auto loss = compute_guided_losses(h.ps, h.pt, h.labels, cfg, 0.25, &g);
  CHECK(std::fabs(loss.l_lPS - h.l_lPS) < 1e-9);
  CHECK(std::fabs(loss.l_lPT - h.l_lPT) < 1e-9);
  CHECK(std::fabs(loss.l_unsup - h.l_unsup) < 1e-9);
  CHECK(std::fabs(loss.l_unsup_prime - h.l_unsup_prime) < 1e-9);
  CHECK(loss.total == doctest::Approx(h.l_lPS + h.l_lPT + h.l_unsup + 0.25 * h.l_unsup_prime).epsilon(1e-12));

  // Gradients against finite differences of the total with pseudo-tags held
  // fixed (no probability sits within the step of the threshold except the
  // teacher's 0.5, which only feeds a tag).
  auto total = [&](nets::ModelOutputs ps, nets::ModelOutputs pt) {
    return compute_guided_losses(ps, pt, h.labels, cfg, 0.25).total;
  };
  for (std::size_t i = 0; i < 8; ++i) {
    for (int which = 0; which < 2; ++which) {
      auto pp = h.ps, pm = h.ps, tp = h.pt, tm = h.pt;
      const float step = 1e-3f;
      auto& vp = which == 0 ? pp.clip_probs[i] : tp.clip_probs[i];
      auto& vm = which == 0 ? pm.clip_probs[i] : tm.clip_probs[i];
      if (which == 1 && i == 5) continue;
      vp += step;
      vm -= step;
      // Pseudo-tags come from the other model; hold them by using the
      // unperturbed copy there.
      const double num = which == 0 ? (total(pp, h.pt) - total(pm, h.pt)) / (2.0 * step)
                                    : (total(h.ps, tp) - total(h.ps, tm)) / (2.0 * step);
      const double ana = which == 0 ? g.d_ps[i] : g.d_pt[i];
      CAPTURE(i);
      CAPTURE(which);
      CHECK(ana == doctest::Approx(num).epsilon(1e-3));
    }
  }
}

TEST_CASE("all labeled or all unlabeled batches") {
  auto h = testing::hand_batch();
  TrainConfig cfg;
  h.labels.weak_mask = {1, 1, 1, 1};
  auto l = compute_guided_losses(h.ps, h.pt, h.labels, cfg, 1.0);
  CHECK(l.l_unsup == 0.0);
  CHECK(l.l_unsup_prime == 0.0);
  h.labels.weak_mask = {0, 0, 0, 0};
  l = compute_guided_losses(h.ps, h.pt, h.labels, cfg, 1.0);
  CHECK(l.l_lPS == 0.0);
  CHECK(l.l_lPT == 0.0);
  CHECK(l.l_unsup > 0.0);
}

TEST_CASE("ablated term") {
  const auto h = testing::hand_batch();
  TrainConfig cfg;
  cfg.ablate_fine_tune_term = true;
  GuidedGrads g;
  const auto l = compute_guided_losses(h.ps, h.pt, h.labels, cfg, 0.5, &g);
  CHECK(l.l_unsup_prime == 0.0);
  CHECK(g.d_pt[4] == 0.0f);
  CHECK(g.d_pt[7] == 0.0f);
}

TEST_CASE("weak loss") {
  const auto h = testing::hand_batch();
  std::vector<float> grad;
  CHECK(std::fabs(compute_weak_loss(h.ps, h.labels, &grad) - h.l_lPS) < 1e-9);
  CHECK(grad[4] == 0.0f);
  CHECK(grad[0] != 0.0f);
}

TEST_CASE("adam first step") {
  std::vector<float> value{1.0f, -2.0f, 0.5f}, grad{0.3f, -4.0f, 0.0f};
  Adam opt({{"w", value, grad}}, 0.01);
  opt.step();
  CHECK(value[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(value[1] == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(value[2] == 0.5f);
  CHECK(opt.steps() == 1);
}

TEST_CASE("holdout split") {
  auto t = testing::toy_data(10, 4, 3);
  CHECK(t.data.weak.size() == 7u);
  CHECK(t.data.holdout.size() == 3u);
  CHECK(t.data.holdout.front().clip_id == "c7");
  CHECK(t.data.unlabeled.size() == 4u);
  CHECK_THROWS_AS(testing::toy_data(2, 0, 3), ConfigError);
}

TEST_CASE("zero epochs") {
  auto t = testing::toy_data(24, 48, 8);
  auto cfg = testing::toy_config(TrainMode::kGuided, 0);
  const auto r = train::train(t.data, cfg);
  CHECK(r.log.empty());
  REQUIRE(r.student);
  REQUIRE(r.teacher);
  nets::Network fresh(nets::ModelSpec::default_ps(), child_seed(cfg.seed, 1));
  CHECK(r.student->flat_parameters() == fresh.flat_parameters());
}

TEST_CASE("guided training is deterministic and logs both models") {
  auto t = testing::toy_data(24, 72, 8);
  const auto cfg = testing::toy_config(TrainMode::kGuided);
  auto a = train::train(t.data, cfg);
  auto b = train::train(t.data, cfg);
  CHECK(a.student->flat_parameters() == b.student->flat_parameters());
  CHECK(a.teacher->flat_parameters() == b.teacher->flat_parameters());
  CHECK(same_logs(a.log, b.log));
  REQUIRE(a.log.size() == 2u);
  CHECK(a.log[0].tagging_f1.size() == 2u);
  CHECK(a.log[0].tagging_f1[1].first == "pt");
  // 16 weak of 88 clips: 3 labeled + 13 unlabeled per batch, 6 batches.
  CHECK(a.log[0].batches == 6);
  CHECK(a.log[1].loss.a == doctest::Approx(unsupervised_weight(2, 0, cfg.gamma)));

  auto c_cfg = cfg;
  c_cfg.seed = 4;
  CHECK(train::train(t.data, c_cfg).student->flat_parameters() != a.student->flat_parameters());
}

TEST_CASE("gamma one equals the ablated path") {
  auto t = testing::toy_data(24, 72, 8);
  auto cfg = testing::toy_config(TrainMode::kGuided, 3);
  cfg.gamma = 1.0;
  std::vector<std::vector<float>> with, without;
  TrainHooks h1{[&](const EpochLog&, nets::Network&, nets::Network* pt) { with.push_back(pt->flat_parameters()); }};
  TrainHooks h2{[&](const EpochLog&, nets::Network&, nets::Network* pt) { without.push_back(pt->flat_parameters()); }};
  train::train(t.data, cfg, h1);
  cfg.ablate_fine_tune_term = true;
  train::train(t.data, cfg, h2);
  CHECK(with == without);

  // Any gamma below one moves the teacher differently.
  cfg.ablate_fine_tune_term = false;
  cfg.gamma = 0.5;
  std::vector<std::vector<float>> tuned;
  train::train(t.data, cfg, {[&](const EpochLog&, nets::Network&, nets::Network* pt) { tuned.push_back(pt->flat_parameters()); }});
  CHECK(tuned.back() != with.back());
}

TEST_CASE("weak-only ignores unlabeled clips") {
  auto t = testing::toy_data(24, 40, 8);
  auto cfg = testing::toy_config(TrainMode::kWeakOnlyPS);
  const auto a = train::train(t.data, cfg);
  auto stripped = t.data;
  stripped.unlabeled.clear();
  const auto b = train::train(stripped, cfg);
  CHECK(a.student->flat_parameters() == b.student->flat_parameters());
  CHECK_FALSE(a.teacher);
  for (const auto& l : a.log) {
    CHECK(l.loss.l_unsup == 0.0);
    CHECK(l.loss.l_lPT == 0.0);
  }
  cfg.mode = TrainMode::kWeakOnlyPT;
  const auto pt = train::train(t.data, cfg);
  CHECK(pt.student->spec().kind == nets::ModelKind::kPT);
  for (const auto& l : pt.log) CHECK(l.loss.l_unsup == 0.0);
}

TEST_CASE("mean teacher decay extremes") {
  auto t = testing::toy_data(24, 72, 8);
  auto cfg = testing::toy_config(TrainMode::kMeanTeacher, 1);
  cfg.ema_decay = 1.0;
  const auto frozen = train::train(t.data, cfg);
  nets::Network init(student_spec(cfg, 5, 64), child_seed(cfg.seed, 1));
  CHECK(frozen.teacher->flat_parameters() == init.flat_parameters());
  CHECK(frozen.student->flat_parameters() != init.flat_parameters());
  CHECK(frozen.log[0].tagging_f1.size() == 2u);

  cfg.ema_decay = 0.0;
  const auto copy = train::train(t.data, cfg);
  CHECK(copy.teacher->flat_parameters() == copy.student->flat_parameters());
  CHECK(copy.teacher->flat_buffers() == copy.student->flat_buffers());
}

TEST_CASE("homogeneous teacher uses the student architecture") {
  auto t = testing::toy_data(24, 72, 8);
  const auto r = train::train(t.data, testing::toy_config(TrainMode::kGuidedHomogeneous, 1));
  CHECK(r.teacher->spec() == r.student->spec());
  CHECK(r.log[0].tagging_f1[1].first == "teacher");
}

TEST_CASE("non-finite inputs raise a divergence error") {
  auto t = testing::toy_data(24, 72, 8);
  for (auto& m : t.storage) m->data[0] = std::nanf("");
  try {
    train::train(t.data, testing::toy_config(TrainMode::kGuided, 1));
    FAIL("training on NaN inputs succeeded");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.exit_code() == ExitCode::kDivergence);
  }
}

TEST_CASE("learning on the toy task") {
  auto t = testing::toy_data(160, 0, 40);
  auto cfg = testing::toy_config(TrainMode::kWeakOnlyPS, 6);
  const auto r = train::train(t.data, cfg);
  CHECK(r.log.back().tagging_f1[0].second > r.log.front().tagging_f1[0].second);
  CHECK(r.log.back().loss.total < r.log.front().loss.total);
}

TEST_CASE("epoch log json") {
  EpochLog l;
  l.epoch = 3;
  l.batches = 7;
  l.loss.l_lPS = 0.5;
  l.loss.total = 0.5;
  l.tagging_f1 = {{"ps", 0.25}};
  l.wall_seconds = 1.5;
  const auto back = EpochLog::from_json(nlohmann::json::parse(l.to_json().dump()));
  CHECK(back.to_json().dump() == l.to_json().dump());
  CHECK_FALSE(l.to_json(false).contains("wall_seconds"));
}

}
