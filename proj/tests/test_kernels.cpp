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
#include <vector>

#include "doctest.h"
#include "gsed/kernels.hpp"
#include "gsed/rng.hpp"

using namespace gsed;
namespace k = gsed::kernels;

namespace {

Tensor random_tensor(int b, int t, int f, int c, Rng& rng) {
  Tensor x(b, t, f, c);
  for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 1.0));
  return x;
}

std::vector<float> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, scale));
  return v;
}

double max_rel_diff(std::span<const float> a, std::span<const float> b) {
  REQUIRE(a.size() == b.size());
  double scale = 1e-6, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, static_cast<double>(std::fabs(b[i])));
    diff = std::max(diff, static_cast<double>(std::fabs(a[i] - b[i])));
  }
  return diff / scale;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("conv2d matches the reference") {
  Rng rng(11);
  for (auto shape : {k::ConvShape{3, 3, 1, 8}, k::ConvShape{5, 3, 8, 16}, k::ConvShape{1, 1, 4, 3},
                     k::ConvShape{3, 5, 3, 2}}) {
    CAPTURE(shape.kt);
    CAPTURE(shape.cin);
    const auto x = random_tensor(3, 17, 9, shape.cin, rng);
    const auto w = random_vec(shape.weight_count(), rng, 0.3);
    Tensor y, y_ref;
    k::conv2d_forward(x, w, shape, y);
    k::reference::conv2d_forward(x, w, shape, y_ref);
    REQUIRE(y.same_shape(y_ref));
    CHECK(max_rel_diff(y.data, y_ref.data) < 1e-5);

    const auto dy = random_tensor(3, 17, 9, shape.cout, rng);
    Tensor dx, dx_ref;
    std::vector<float> dw(shape.weight_count(), 0.0f), dw_ref(shape.weight_count(), 0.0f);
    k::conv2d_backward(x, w, shape, dy, &dx, dw);
    k::reference::conv2d_backward(x, w, shape, dy, &dx_ref, dw_ref);
    CHECK(max_rel_diff(dx.data, dx_ref.data) < 1e-5);
    CHECK(max_rel_diff(dw, dw_ref) < 1e-5);
  }
}

TEST_CASE("conv2d is a correlation with same padding") {
  // 1x1 input channel, 3x3 kernel with a single 1 at (0, 0): y(t, f) = x(t-1, f-1).
  Tensor x(1, 4, 4, 1);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<float>(i + 1);
  std::vector<float> w(9, 0.0f);
  w[0] = 1.0f;
  Tensor y;
  k::conv2d_forward(x, w, {3, 3, 1, 1}, y);
  CHECK(y.at(0, 0, 0, 0) == 0.0f);
  CHECK(y.at(0, 2, 2, 0) == x.at(0, 1, 1, 0));
  CHECK(y.at(0, 3, 1, 0) == x.at(0, 2, 0, 0));
}

TEST_CASE("batchnorm matches the reference") {
  Rng rng(3);
  const auto x = random_tensor(4, 11, 5, 6, rng);
  const auto gamma = random_vec(6, rng), beta = random_vec(6, rng);
  Tensor y, y_ref;
  k::BatchNormCache c, c_ref;
  k::batchnorm_forward_train(x, gamma, beta, 1e-5f, y, c);
  k::reference::batchnorm_forward_train(x, gamma, beta, 1e-5f, y_ref, c_ref);
  CHECK(max_rel_diff(y.data, y_ref.data) < 1e-5);
  CHECK(max_rel_diff(c.mean, c_ref.mean) < 1e-5);
  CHECK(max_rel_diff(c.var, c_ref.var) < 1e-5);

  // Normalized output: per-channel mean beta, std |gamma|.
  for (int ch = 0; ch < 6; ++ch) {
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 11; ++t)
        for (int f = 0; f < 5; ++f) {
          const double v = y.at(b, t, f, ch);
          s += v;
          s2 += v * v;
          ++n;
        }
    const double mean = s / n;
    CHECK(mean == doctest::Approx(beta[ch]).epsilon(1e-4).scale(1.0));
    CHECK(std::sqrt(s2 / n - mean * mean) == doctest::Approx(std::fabs(gamma[ch])).epsilon(1e-3));
  }

  const auto dy = random_tensor(4, 11, 5, 6, rng);
  Tensor dx, dx_ref;
  std::vector<float> dg(6, 0.0f), db(6, 0.0f), dg_ref(6, 0.0f), db_ref(6, 0.0f);
  k::batchnorm_backward(c, gamma, dy, dx, dg, db);
  k::reference::batchnorm_backward(c_ref, gamma, dy, dx_ref, dg_ref, db_ref);
  CHECK(max_rel_diff(dx.data, dx_ref.data) < 1e-4);
  CHECK(max_rel_diff(dg, dg_ref) < 1e-5);
  CHECK(max_rel_diff(db, db_ref) < 1e-5);
}

TEST_CASE("batchnorm eval uses running statistics") {
  Tensor x(1, 1, 1, 2);
  x.data = {3.0f, -1.0f};
  const std::vector<float> gamma{2.0f, 1.0f}, beta{0.5f, 0.0f}, mean{1.0f, -1.0f}, var{4.0f, 1.0f};
  Tensor y;
  k::batchnorm_forward_eval(x, gamma, beta, mean, var, 0.0f, y);
  CHECK(y.data[0] == doctest::Approx(2.0 * (3.0 - 1.0) / 2.0 + 0.5));
  CHECK(y.data[1] == doctest::Approx(0.0));
}

TEST_CASE("maxpool matches the reference and routes gradients") {
  Rng rng(5);
  const auto x = random_tensor(2, 9, 8, 5, rng);
  for (auto [pt, pf] : {std::pair{2, 4}, std::pair{1, 4}, std::pair{2, 2}, std::pair{3, 1}}) {
    Tensor y, y_ref;
    std::vector<std::int64_t> am, am_ref;
    k::maxpool_forward(x, pt, pf, y, am);
    k::reference::maxpool_forward(x, pt, pf, y_ref, am_ref);
    CHECK(y.time == 9 / pt);
    CHECK(y.freq == 8 / pf);
    CHECK(y.data == y_ref.data);
    CHECK(am == am_ref);
    Tensor dy(y.batch, y.time, y.freq, y.channels, 1.0f), dx;
    dx.reshape_like(x);
    k::maxpool_backward(dy, am, dx);
    double total = 0.0;
    for (float v : dx.data) total += v;
    CHECK(total == doctest::Approx(static_cast<double>(y.size())));
    for (std::size_t i = 0; i < am.size(); ++i) CHECK(x.data[am[i]] == y.data[i]);
  }
}

TEST_CASE("relu") {
  Tensor x(1, 1, 1, 4);
  x.data = {-1.0f, 0.0f, 2.0f, -0.5f};
  k::relu_forward(x);
  CHECK(x.data == std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f});
  Tensor dy(1, 1, 1, 4, 1.0f);
  k::relu_backward(x, dy);
  CHECK(dy.data == std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f});
}

TEST_CASE("dense matches the reference") {
  Rng rng(8);
  const int rows = 13, in = 7, out = 5;
  const auto x = random_vec(rows * in, rng), w = random_vec(in * out, rng), bias = random_vec(out, rng);
  std::vector<float> y(rows * out), y_ref(rows * out);
  k::dense_forward(x, rows, in, w, bias, out, y);
  k::reference::dense_forward(x, rows, in, w, bias, out, y_ref);
  CHECK(max_rel_diff(y, y_ref) < 1e-5);
  const auto dy = random_vec(rows * out, rng);
  std::vector<float> dx(rows * in), dx_ref(rows * in), dw(in * out, 0.0f), dw_ref(in * out, 0.0f),
      db(out, 0.0f), db_ref(out, 0.0f);
  k::dense_backward(x, rows, in, w, out, dy, dx, dw, db);
  k::reference::dense_backward(x, rows, in, w, out, dy, dx_ref, dw_ref, db_ref);
  CHECK(max_rel_diff(dx, dx_ref) < 1e-5);
  CHECK(max_rel_diff(dw, dw_ref) < 1e-5);
  CHECK(max_rel_diff(db, db_ref) < 1e-5);
}

}
