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
#include <functional>
#include <string>
#include <vector>

#include "gsed/corpus.hpp"
#include "gsed/features.hpp"
#include "gsed/metrics.hpp"
#include "gsed/postprocess.hpp"
#include "gsed/trainer.hpp"

namespace gsed::config {

struct ExperimentConfig {
  corpus::CorpusSpec corpus;
  features::FeatureConfig features;
  train::TrainConfig train;
  postprocess::SmoothingConfig smoothing;
  metrics::CollarConfig collars;
  int repeats = 3;
  std::string output_dir;  // empty: $GUIDED_SED_OUT, else ./guided_sed_out
  std::string corpus_dir;  // empty: <output_dir>/corpus

  void validate() const;
  std::filesystem::path resolved_output_dir() const;
  std::filesystem::path resolved_corpus_dir() const;
};

// One dotted key of the flat config format.
struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  bool hashed = true;  // output locations are left out of the hash
};

const std::vector<Field>& fields();

// Throws ConfigError naming the key for unknown keys or unparsable values.
void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& cfg, const std::string& key);

// "section.key = value" lines; '#' starts a comment. Errors cite the line.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Every field in registry order; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& cfg);

// FNV-1a over the canonical text of the hashed fields, 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
// Hash of the corpus and feature sections only; identifies a corpus.
std::string corpus_id(const ExperimentConfig& cfg);

std::string fnv1a_hex(const std::string& text);

}  // namespace gsed::config
