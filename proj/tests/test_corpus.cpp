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

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gsed/corpus.hpp"
#include "gsed/error.hpp"
#include "test_util.hpp"

using namespace gsed;
using namespace gsed::corpus;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

CorpusSpec small_spec() {
  CorpusSpec s;
  s.n_weak = 6;
  s.n_unlabeled = 4;
  s.n_test = 8;
  s.clip_seconds = 5.0;
  return s;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("spec validation") {
  CorpusSpec s;
  CHECK_NOTHROW(s.validate());
  s.event_duration_max = 11.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.n_weak = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.polyphony_max = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("class duration ranges grow with the class id") {
  const CorpusSpec s;
  double prev_lo = 0.0;
  for (int c = 0; c < s.n_classes; ++c) {
    const auto [lo, hi] = s.class_duration_range(c);
    CHECK(lo >= s.event_duration_min - 1e-12);
    CHECK(hi <= s.event_duration_max + 1e-12);
    CHECK(lo < hi);
    CHECK(lo >= prev_lo);
    prev_lo = lo;
  }
}

TEST_CASE("clips are deterministic and respect the spec") {
  const CorpusSpec s;
  const auto a = generate_clip(s, Split::kTest, 3);
  const auto b = generate_clip(s, Split::kTest, 3);
  CHECK(a.audio.samples == b.audio.samples);
  CHECK(a.events == b.events);
  CHECK(a.audio.samples.size() == 160000u);
  const auto other = generate_clip(s, Split::kTest, 4);
  CHECK(other.audio.samples != a.audio.samples);

  for (int i = 0; i < 40; ++i) {
    const auto clip = generate_clip(s, Split::kWeak, i);
    REQUIRE_FALSE(clip.events.empty());
    for (std::size_t k = 0; k < clip.events.size(); ++k) {
      const auto& e = clip.events[k];
      CHECK(e.onset >= 0.0);
      CHECK(e.offset <= s.clip_seconds + 1e-9);
      CHECK(e.duration() >= s.event_duration_min - 1e-9);
      CHECK(e.duration() <= s.event_duration_max + 1e-9);
      if (k > 0) CHECK(clip.events[k - 1].onset <= e.onset);
    }
    // Polyphony: no instant covered by more than polyphony_max events.
    for (const auto& e : clip.events) {
      int active = 0;
      for (const auto& o : clip.events)
        if (o.onset <= e.onset && e.onset < o.offset) ++active;
      CHECK(active <= s.polyphony_max);
    }
  }
}

TEST_CASE("generated corpus") {
  testing::TempDir dir("corpus");
  const auto spec = small_spec();
  const auto g = generate_synthetic_corpus(spec, dir.path() / "a");
  CHECK(g.records.size() == 18u);

  const auto manifest = load_manifest(g.manifest_path, spec.n_classes);
  const auto truth = load_truth(g.truth_path, spec.n_classes);
  REQUIRE(manifest.size() == 18u);
  REQUIRE(truth.size() == 18u);
  std::map<Split, int> counts;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = manifest[i];
    ++counts[r.split];
    CHECK(std::filesystem::exists(dir.path() / "a" / r.audio_path));
    REQUIRE(truth[i].clip_id == r.clip_id);
    switch (r.split) {
      case Split::kWeak:
        REQUIRE(r.tags);
        CHECK_FALSE(r.events);
        CHECK(*r.tags == tag_union(*truth[i].events));
        break;
      case Split::kUnlabeled:
        CHECK_FALSE(r.tags);
        CHECK_FALSE(r.events);
        break;
      case Split::kTest:
        REQUIRE(r.events);
        CHECK(*r.events == *truth[i].events);
        if (r.tags) CHECK(*r.tags == tag_union(*r.events));
        break;
    }
  }
  CHECK(counts[Split::kWeak] == 6);
  CHECK(counts[Split::kUnlabeled] == 4);
  CHECK(counts[Split::kTest] == 8);

  // Same seed twice: byte-identical manifests. Another seed: different audio.
  const auto again = generate_synthetic_corpus(spec, dir.path() / "b");
  CHECK(slurp(g.manifest_path) == slurp(again.manifest_path));
  CHECK(slurp(g.truth_path) == slurp(again.truth_path));
  CHECK(slurp(dir.path() / "a" / manifest[0].audio_path) == slurp(dir.path() / "b" / manifest[0].audio_path));
  auto reseeded = spec;
  reseeded.seed = 7;
  generate_synthetic_corpus(reseeded, dir.path() / "c");
  CHECK(slurp(dir.path() / "a" / manifest[0].audio_path) != slurp(dir.path() / "c" / manifest[0].audio_path));
}

TEST_CASE("no weak clips means no tags") {
  testing::TempDir dir("noweak");
  auto spec = small_spec();
  spec.n_weak = 0;
  const auto g = generate_synthetic_corpus(spec, dir.path());
  for (const auto& r : load_manifest(g.manifest_path, spec.n_classes)) CHECK_FALSE(r.tags);
}

TEST_CASE("test tags equal the union of event classes") {
  auto spec = small_spec();
  spec.n_test = 200;
  for (int i = 0; i < spec.n_test; ++i) {
    const auto clip = generate_clip(spec, Split::kTest, i);
    std::set<int> classes;
    for (const auto& e : clip.events) classes.insert(e.class_id);
    CHECK(tag_union(clip.events) == std::vector<int>(classes.begin(), classes.end()));
  }
}

TEST_CASE("manifest parsing") {
  testing::TempDir dir("manifest");
  const auto path = dir.path() / "m.jsonl";
  std::vector<ClipRecord> records(3);
  records[0] = {"w0", Split::kWeak, "audio/w0.wav", "", std::vector<int>{0, 2}, std::nullopt};
  records[1] = {"u0", Split::kUnlabeled, "audio/u0.wav", "", std::nullopt, std::nullopt};
  records[2] = {"t0", Split::kTest, "audio/t0.wav", "features/t0.feat", std::nullopt,
                std::vector<EventInterval>{{1, 0.5, 1.5}, {0, 2.0, 3.25}}};
  write_manifest(path, records);
  const auto back = load_manifest(path, 3);
  CHECK(back == records);

  auto write_line = [&](const std::string& line) {
    std::ofstream os(path);
    os << line << "\n";
  };
  write_line(R"({"clip_id":"bad1","split":"test","audio_path":"x","events":[{"class":0,"onset":2.0,"offset":1.0}]})");
  try {
    load_manifest(path, 3);
    FAIL("accepted an inverted event");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("bad1") != std::string::npos);
  }
  write_line(R"({"clip_id":"bad2","split":"weak","audio_path":"x","tags":[5]})");
  CHECK_THROWS_AS(load_manifest(path, 3), ValidationError);
  write_line(R"({"clip_id":"bad3","split":"unlabeled","audio_path":"x","tags":[0]})");
  CHECK_THROWS_AS(load_manifest(path, 3), ValidationError);
  write_line(R"({"clip_id":"bad4","split":"weak","audio_path":"x"})");
  CHECK_THROWS_AS(load_manifest(path, 3), ValidationError);
  write_line("{not json");
  CHECK_THROWS_AS(load_manifest(path, 3), ValidationError);
}

TEST_CASE("sampler composition") {
  std::vector<MatrixF> feats(100, MatrixF(4, 2));
  for (int i = 0; i < 100; ++i) feats[i](0, 0) = static_cast<float>(i);
  std::vector<LabeledClip> weak;
  std::vector<UnlabeledClip> unl;
  for (int i = 0; i < 20; ++i) weak.push_back({"w" + std::to_string(i), &feats[i], {1, 0, i % 2}});
  for (int i = 20; i < 100; ++i) unl.push_back({"u" + std::to_string(i), &feats[i]});

  SUBCASE("quarter labeled") {
    MinibatchSampler s(&weak, &unl, 64, 0.25, 3, 1);
    CHECK(s.labeled_per_batch() == 16);
    CHECK(s.unlabeled_per_batch() == 48);
    s.start_epoch();
    const auto b = s.next();
    CHECK(b.size() == 64);
    CHECK(b.labeled_count() == 16);
    for (int i = 0; i < b.size(); ++i) {
      const bool labeled = b.weak_mask[i] == 1;
      CHECK(labeled == (b.clip_ids[i][0] == 'w'));
    }
  }
  SUBCASE("all labeled") {
    MinibatchSampler s(&weak, nullptr, 8, 1.0, 3, 1);
    s.start_epoch();
    CHECK(s.next().labeled_count() == 8);
  }
  SUBCASE("all unlabeled") {
    MinibatchSampler s(&weak, &unl, 8, 0.0, 3, 1);
    s.start_epoch();
    CHECK(s.next().labeled_count() == 0);
  }
  SUBCASE("oversized share") {
    CHECK_THROWS_AS(MinibatchSampler(&weak, &unl, 64, 0.5, 3, 1), SamplingError);
  }
  SUBCASE("every clip appears each epoch") {
    MinibatchSampler s(&weak, &unl, 10, 0.2, 3, 5);
    // 20/2 = 10 labeled batches, 80/8 = 10 unlabeled batches.
    CHECK(s.batches_per_epoch() == 10);
    for (int epoch = 0; epoch < 3; ++epoch) {
      s.start_epoch();
      std::map<int, int> seen_w, seen_u;
      for (int b = 0; b < s.batches_per_epoch(); ++b) {
        const auto [wi, ui] = s.next_indices();
        for (int i : wi) ++seen_w[i];
        for (int i : ui) ++seen_u[i];
      }
      CHECK(seen_w.size() == 20u);
      CHECK(seen_u.size() == 80u);
      for (const auto& [i, n] : seen_w) CHECK(n == 1);
    }
  }
  SUBCASE("same seed, same batches") {
    MinibatchSampler a(&weak, &unl, 16, 0.25, 3, 9), b(&weak, &unl, 16, 0.25, 3, 9);
    a.start_epoch();
    b.start_epoch();
    for (int k = 0; k < 5; ++k) CHECK(a.next().clip_ids == b.next().clip_ids);
  }
  SUBCASE("labels travel with the clip") {
    MinibatchSampler s(&weak, &unl, 16, 0.25, 3, 2);
    s.start_epoch();
    const auto b = s.next();
    for (int i = 0; i < b.size(); ++i) {
      if (!b.weak_mask[i]) continue;
      const int id = static_cast<int>(b.inputs.at(i, 0, 0, 0));
      CHECK(b.tags(i, 0) == 1.0f);
      CHECK(b.tags(i, 1) == 0.0f);
      CHECK(b.tags(i, 2) == static_cast<float>(id % 2));
    }
  }
}

TEST_CASE("stack_features rejects ragged batches") {
  MatrixF a(4, 2), b(5, 2);
  CHECK_THROWS_AS(stack_features({&a, &b}), ValidationError);
  const auto x = stack_features({&a, &a});
  CHECK(x.batch == 2);
  CHECK(x.time == 4);
  CHECK(x.freq == 2);
  CHECK(x.channels == 1);
}

TEST_CASE("class names") {
  CHECK(class_name(0) == "tone");
  CHECK(class_name(4) == "harmonic");
  CHECK(class_name(5) != class_name(0));
}

}
