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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gsed/features.hpp"
#include "gsed/rng.hpp"
#include "gsed/tensor.hpp"

namespace gsed::corpus {

struct EventInterval {
  int class_id = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds

  double duration() const { return offset - onset; }
  bool operator==(const EventInterval&) const = default;
};

enum class Split { kWeak, kUnlabeled, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One clip as listed in a manifest. Which optional fields are present depends
// on the split: weak clips carry tags only, test clips carry events only,
// unlabeled clips carry neither.
struct ClipRecord {
  std::string clip_id;
  Split split = Split::kUnlabeled;
  std::string audio_path;
  std::string feature_path;
  std::optional<std::vector<int>> tags;  // sorted distinct class ids
  std::optional<std::vector<EventInterval>> events;

  bool operator==(const ClipRecord&) const = default;
};

// Sorted distinct class ids appearing in an event list.
std::vector<int> tag_union(const std::vector<EventInterval>& events);
// C-length binary vector from a class-id list.
std::vector<int> tag_vector(const std::vector<int>& class_ids, int n_classes);

// Bumped whenever generated audio changes for an unchanged spec.
inline constexpr const char* kGeneratorVersion = "2";

struct CorpusSpec {
  int n_classes = 5;
  int n_weak = 500;
  int n_unlabeled = 2000;
  int n_test = 200;
  double clip_seconds = 10.0;
  int polyphony_max = 2;
  double event_duration_min = 0.5;
  double event_duration_max = 4.0;
  double snr_min_db = 6.0;
  double snr_max_db = 20.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;

  void validate() const;
  // Duration range for one class: the global range is split into staggered
  // half-width windows so higher class ids produce longer events.
  std::pair<double, double> class_duration_range(int class_id) const;
  bool operator==(const CorpusSpec&) const = default;
};

struct SyntheticClip {
  features::Waveform audio;
  std::vector<EventInterval> events;  // sorted by onset
};

// Deterministic in (spec.seed, split, index).
SyntheticClip generate_clip(const CorpusSpec& spec, Split split, int index);

std::string clip_id_for(Split split, int index);

// Template name of a class: tone, chirp, noise_burst, am_tone, harmonic; ids
// past five get a wrap suffix ("tone_1").
std::string class_name(int class_id);

struct GeneratedCorpus {
  std::filesystem::path manifest_path;
  std::filesystem::path truth_path;
  std::vector<ClipRecord> records;
};

// Writes <dir>/audio/<clip_id>.wav, <dir>/manifest.jsonl (training-facing) and
// <dir>/truth.jsonl (sidecar with every clip's events, diagnostics only).
GeneratedCorpus generate_synthetic_corpus(const CorpusSpec& spec,
                                          const std::filesystem::path& dir);

// JSONL manifest I/O. Validation errors name the line and clip_id.
std::vector<ClipRecord> load_manifest(const std::filesystem::path& path, int n_classes);
void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);
std::string record_to_json_line(const ClipRecord& r);

// Sidecar truth: every clip with its full event list, any split.
std::vector<ClipRecord> load_truth(const std::filesystem::path& path, int n_classes);

// ---------------------------------------------------------------------------
// Training-facing pools. Unlabeled clips have no label fields at all, so the
// hidden truth of the unlabeled split cannot leak through this API.

struct LabeledClip {
  std::string clip_id;
  const MatrixF* features = nullptr;  // T x F, owned by the FeatureStore
  std::vector<int> tags;              // C-length binary
};

struct UnlabeledClip {
  std::string clip_id;
  const MatrixF* features = nullptr;
};

struct Minibatch {
  Tensor inputs;                 // B x T x F x 1
  std::vector<std::uint8_t> weak_mask;  // 1 = labeled member
  MatrixF tags;                  // B x C, meaningful where weak_mask == 1
  std::vector<std::string> clip_ids;

  int size() const { return inputs.batch; }
  int labeled_count() const;
};

// Packs clips into a batch tensor. All clips must share T x F.
Tensor stack_features(const std::vector<const MatrixF*>& clips);

// Mixed-batch sampler. Every batch holds exactly round(B * labeled_fraction)
// labeled clips. An epoch runs until the larger pool (relative to its
// per-batch share) is exhausted: batches = max(ceil(nL / bL), ceil(nU / bU)).
// Each pool is reshuffled at the start of every epoch and drawn without
// replacement; a pool that runs dry mid-epoch is reshuffled and recycled.
// Hence each clip appears at least once and at most
// ceil(batches * b_pool / n_pool) times per epoch.
class MinibatchSampler {
 public:
  MinibatchSampler(const std::vector<LabeledClip>* weak_pool,
                   const std::vector<UnlabeledClip>* unlabeled_pool,
                   int batch_size, double labeled_fraction, int n_classes,
                   std::uint64_t seed);

  int labeled_per_batch() const { return labeled_per_batch_; }
  int unlabeled_per_batch() const { return batch_size_ - labeled_per_batch_; }
  int batches_per_epoch() const { return batches_per_epoch_; }

  // Reshuffles both pools; call once before each epoch.
  void start_epoch();
  // Clip indices of the next batch without materializing tensors.
  std::pair<std::vector<int>, std::vector<int>> next_indices();
  Minibatch next();

  const Rng& rng() const { return rng_; }

 private:
  struct Stream {
    std::vector<int> order;
    std::size_t pos = 0;
  };
  int draw(Stream& s, int pool_size);

  const std::vector<LabeledClip>* weak_;
  const std::vector<UnlabeledClip>* unlabeled_;
  int batch_size_;
  int labeled_per_batch_;
  int batches_per_epoch_;
  int n_classes_;
  Rng rng_;
  Stream weak_stream_;
  Stream unlabeled_stream_;
};

// Per-class durations (seconds) of every event in a record list.
std::vector<std::vector<double>> event_durations_by_class(
    const std::vector<ClipRecord>& records, int n_classes);

}  // namespace gsed::corpus
