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

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace gsed {

// Dense float activation tensor laid out [batch][time][freq][channel]
// (channels innermost).
struct Tensor {
  int batch = 0;
  int time = 0;
  int freq = 0;
  int channels = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int b, int t, int f, int c, float fill = 0.0f)
      : batch(b), time(t), freq(f), channels(c),
        data(static_cast<std::size_t>(b) * t * f * c, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(time) * freq * channels;
  }
  std::size_t index(int b, int t, int f, int c) const {
    return ((static_cast<std::size_t>(b) * time + t) * freq + f) * channels + c;
  }
  float& at(int b, int t, int f, int c) { return data[index(b, t, f, c)]; }
  float at(int b, int t, int f, int c) const { return data[index(b, t, f, c)]; }

  std::span<float> sample(int b) {
    return {data.data() + b * sample_size(), sample_size()};
  }
  std::span<const float> sample(int b) const {
    return {data.data() + b * sample_size(), sample_size()};
  }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && time == o.time && freq == o.freq &&
           channels == o.channels;
  }
  void reshape_like(const Tensor& o) {
    batch = o.batch;
    time = o.time;
    freq = o.freq;
    channels = o.channels;
    data.assign(o.size(), 0.0f);
  }
  void resize(int b, int t, int f, int c) {
    batch = b;
    time = t;
    freq = f;
    channels = c;
    data.assign(static_cast<std::size_t>(b) * t * f * c, 0.0f);
  }
};

// Row-major matrix of reals, used for T x C probability maps and the like.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T{})
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool operator==(const Matrix&) const = default;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using BinaryMatrix = Matrix<int>;

}  // namespace gsed
