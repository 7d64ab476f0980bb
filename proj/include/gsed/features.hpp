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
#include <string>
#include <vector>

#include "gsed/tensor.hpp"

namespace gsed::features {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Analysis parameters. fmax <= 0 means Nyquist. log_floor == 0 disables the
// floor entirely (only useful for tests on signals with no silent bins).
struct FeatureConfig {
  double frame_length_ms = 40.0;
  double hop_fraction = 0.5;
  int n_mels = 64;
  double fmin = 0.0;
  double fmax = 0.0;
  double log_floor = 1e-10;

  int frame_length_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  // Next power of two at or above the frame length.
  int fft_size(int sample_rate) const;
  double effective_fmax(int sample_rate) const;
  // Throws ConfigError on violated invariants.
  void validate(int sample_rate) const;

  bool operator==(const FeatureConfig&) const = default;
};

struct LogMelSpectrogram {
  MatrixF values;  // frames x mel bands
  double frame_hop_seconds = 0.0;

  int frames() const { return values.rows; }
  int bands() const { return values.cols; }
};

// Center-padded framing: frame t is centred on sample t * hop, so the count
// is ceil(n_samples / hop).
int frame_count(std::int64_t n_samples, const FeatureConfig& config, int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x n_fft_bins triangular filters on the HTK mel scale. The rows
// partition [fmin, fmax] with n_mels + 2 equally spaced mel breakpoints.
MatrixF build_mel_filterbank(const FeatureConfig& config, int n_fft_bins, int sample_rate);

// Center frequency (Hz) of each mel band.
std::vector<double> mel_center_frequencies(const FeatureConfig& config, int sample_rate);

// Hann-windowed power spectrum projected on the mel filterbank, then
// log(max(energy, log_floor)).
LogMelSpectrogram compute_log_mel(const Waveform& w, const FeatureConfig& config);

// RIFF/WAVE, mono, PCM-16.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Cached feature container: uint32 T, uint32 F, float64 hop_seconds (all
// little-endian), then T*F little-endian float32 values, row-major.
void write_feature_file(const std::string& path, const LogMelSpectrogram& spec);
LogMelSpectrogram read_feature_file(const std::string& path);

}  // namespace gsed::features
