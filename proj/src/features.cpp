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

#include "gsed/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "gsed/error.hpp"

namespace gsed::features {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Mirror index into [0, n) with numpy-style "reflect" semantics, repeated for
// indices farther than one period away.
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated file: " + path);
  return v;
}

}  // namespace

int FeatureConfig::frame_length_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_length_ms * sample_rate / 1000.0));
}

int FeatureConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_length_samples(sample_rate) * hop_fraction));
}

int FeatureConfig::fft_size(int sample_rate) const {
  return static_cast<int>(std::bit_ceil(static_cast<unsigned>(
      std::max(1, frame_length_samples(sample_rate)))));
}

double FeatureConfig::effective_fmax(int sample_rate) const {
  return fmax > 0.0 ? fmax : sample_rate / 2.0;
}

void FeatureConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (!(frame_length_ms > 0.0)) throw ConfigError("frame_length_ms must be positive");
  if (!(hop_fraction > 0.0 && hop_fraction < 1.0))
    throw ConfigError("hop_fraction must lie in (0, 1)");
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (hop_samples(sample_rate) <= 0) throw ConfigError("hop length rounds to zero samples");
  if (!(fmin >= 0.0 && fmin < effective_fmax(sample_rate)))
    throw ConfigError("fmin must be >= 0 and below fmax");
  if (effective_fmax(sample_rate) > sample_rate / 2.0)
    throw ConfigError("fmax exceeds the Nyquist frequency");
  if (!(log_floor >= 0.0)) throw ConfigError("log_floor must be non-negative");
}

int frame_count(std::int64_t n_samples, const FeatureConfig& config, int sample_rate) {
  if (n_samples < 0) throw ConfigError("negative sample count");
  const std::int64_t hop = config.hop_samples(sample_rate);
  if (hop <= 0) throw ConfigError("hop length must be positive");
  return static_cast<int>((n_samples + hop - 1) / hop);
}

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

std::vector<double> mel_center_frequencies(const FeatureConfig& config, int sample_rate) {
  const double lo = hz_to_mel(config.fmin);
  const double hi = hz_to_mel(config.effective_fmax(sample_rate));
  std::vector<double> centers(config.n_mels);
  for (int m = 0; m < config.n_mels; ++m)
    centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (config.n_mels + 1));
  return centers;
}

MatrixF build_mel_filterbank(const FeatureConfig& config, int n_fft_bins, int sample_rate) {
  config.validate(sample_rate);
  if (n_fft_bins < 2) throw ConfigError("need at least two FFT bins");
  const int n_fft = 2 * (n_fft_bins - 1);
  const double lo = hz_to_mel(config.fmin);
  const double hi = hz_to_mel(config.effective_fmax(sample_rate));
  std::vector<double> edges(config.n_mels + 2);
  for (int i = 0; i < config.n_mels + 2; ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (config.n_mels + 1));

  MatrixF fb(config.n_mels, n_fft_bins, 0.0f);
  for (int m = 0; m < config.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (int k = 0; k < n_fft_bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / n_fft;
      double v = 0.0;
      if (hz > left && hz <= center) v = (hz - left) / (center - left);
      else if (hz > center && hz < right) v = (right - hz) / (right - center);
      fb(m, k) = static_cast<float>(v);
      row_sum += v;
    }
    if (row_sum <= 0.0)
      throw ConfigError("n_mels=" + std::to_string(config.n_mels) +
                        " too large for the FFT resolution: band " +
                        std::to_string(m) + " covers no bins");
  }
  return fb;
}

LogMelSpectrogram compute_log_mel(const Waveform& w, const FeatureConfig& config) {
  config.validate(w.sample_rate);
  if (w.samples.empty()) throw ValidationError("empty waveform");
  for (float s : w.samples)
    if (!std::isfinite(s)) throw ValidationError("waveform contains NaN/Inf samples");

  const int sr = w.sample_rate;
  const int frame_len = config.frame_length_samples(sr);
  const int hop = config.hop_samples(sr);
  const int n_fft = config.fft_size(sr);
  const int n_bins = n_fft / 2 + 1;
  const auto n = static_cast<std::int64_t>(w.samples.size());
  const int n_frames = frame_count(n, config, sr);
  const MatrixF fb = build_mel_filterbank(config, n_bins, sr);

  std::vector<float> window(frame_len);
  for (int i = 0; i < frame_len; ++i)  // periodic Hann
    window[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / frame_len));

  float* in = fftwf_alloc_real(n_fft);
  fftwf_complex* out = fftwf_alloc_complex(n_bins);
  fftwf_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftwf_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
  }

  LogMelSpectrogram spec;
  spec.values = MatrixF(n_frames, config.n_mels);
  spec.frame_hop_seconds = static_cast<double>(hop) / sr;
  std::vector<double> power(n_bins);
  const std::int64_t half = frame_len / 2;
  for (int t = 0; t < n_frames; ++t) {
    const std::int64_t start = static_cast<std::int64_t>(t) * hop - half;
    for (int i = 0; i < n_fft; ++i) {
      if (i < frame_len)
        in[i] = window[i] * w.samples[reflect_index(start + i, n)];
      else
        in[i] = 0.0f;
    }
    fftwf_execute(plan);
    for (int k = 0; k < n_bins; ++k)
      power[k] = static_cast<double>(out[k][0]) * out[k][0] +
                 static_cast<double>(out[k][1]) * out[k][1];
    for (int m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      const auto row = fb.row(m);
      for (int k = 0; k < n_bins; ++k) e += row[k] * power[k];
      spec.values(t, m) = static_cast<float>(std::log(std::max(e, config.log_floor)));
    }
  }

  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftwf_destroy_plan(plan);
  }
  fftwf_free(in);
  fftwf_free(out);
  return spec;
}

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char tag[4];
  auto read_tag = [&](const char* expect) {
    if (!is.read(tag, 4) || std::memcmp(tag, expect, 4) != 0)
      throw ValidationError(path + ": not a RIFF/WAVE file");
  };
  read_tag("RIFF");
  get<std::uint32_t>(is, path);
  read_tag("WAVE");
  Waveform w;
  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const auto size = get<std::uint32_t>(is, path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = get<std::uint16_t>(is, path);
      const auto channels = get<std::uint16_t>(is, path);
      const auto rate = get<std::uint32_t>(is, path);
      get<std::uint32_t>(is, path);
      get<std::uint16_t>(is, path);
      const auto bits = get<std::uint16_t>(is, path);
      if (format != 1 || channels != 1 || bits != 16)
        throw ValidationError(path + ": only mono PCM-16 is supported");
      w.sample_rate = static_cast<int>(rate);
      is.ignore(size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw ValidationError(path + ": data chunk before fmt chunk");
      std::vector<std::int16_t> pcm(size / 2);
      if (!is.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2)))
        throw IoError("truncated file: " + path);
      w.samples.resize(pcm.size());
      for (std::size_t i = 0; i < pcm.size(); ++i) w.samples[i] = pcm[i] / 32768.0f;
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw ValidationError(path + ": no data chunk");
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, 1);
  put<std::uint16_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put<std::uint16_t>(os, 2);
  put<std::uint16_t>(os, 16);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  std::vector<std::int16_t> pcm(w.samples.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    const float v = std::clamp(w.samples[i], -1.0f, 32767.0f / 32768.0f);
    pcm[i] = static_cast<std::int16_t>(std::lround(v * 32768.0f));
  }
  os.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
  if (!os) throw IoError("failed writing " + path);
}

void write_feature_file(const std::string& path, const LogMelSpectrogram& spec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(spec.frames()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(spec.bands()));
  put<double>(os, spec.frame_hop_seconds);
  os.write(reinterpret_cast<const char*>(spec.values.data.data()),
           static_cast<std::streamsize>(spec.values.data.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + path);
}

LogMelSpectrogram read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  const auto t = get<std::uint32_t>(is, path);
  const auto f = get<std::uint32_t>(is, path);
  LogMelSpectrogram spec;
  spec.frame_hop_seconds = get<double>(is, path);
  spec.values = MatrixF(static_cast<int>(t), static_cast<int>(f));
  if (!is.read(reinterpret_cast<char*>(spec.values.data.data()),
               static_cast<std::streamsize>(spec.values.data.size() * sizeof(float))))
    throw IoError("truncated feature file: " + path);
  return spec;
}

}  // namespace gsed::features
