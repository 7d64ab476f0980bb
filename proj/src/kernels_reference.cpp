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
#include <limits>

#include "gsed/kernels.hpp"

// Direct-loop versions of the parallel kernels. Slow on purpose: every output
// is accumulated in double straight from its definition.

namespace gsed::kernels::reference {

void conv2d_forward(const Tensor& x, std::span<const float> w,
                    const ConvShape& s, Tensor& y) {
  y.resize(x.batch, x.time, x.freq, s.cout);
  const int pt = s.kt / 2, pf = s.kf / 2;
  for (int b = 0; b < x.batch; ++b)
    for (int t = 0; t < x.time; ++t)
      for (int f = 0; f < x.freq; ++f)
        for (int co = 0; co < s.cout; ++co) {
          double acc = 0.0;
          for (int dt = 0; dt < s.kt; ++dt)
            for (int df = 0; df < s.kf; ++df) {
              const int tt = t + dt - pt, ff = f + df - pf;
              if (tt < 0 || tt >= x.time || ff < 0 || ff >= x.freq) continue;
              for (int ci = 0; ci < s.cin; ++ci)
                acc += static_cast<double>(x.at(b, tt, ff, ci)) *
                       w[((static_cast<std::size_t>(dt) * s.kf + df) * s.cin + ci) * s.cout + co];
            }
          y.at(b, t, f, co) = static_cast<float>(acc);
        }
}

void conv2d_backward(const Tensor& x, std::span<const float> w,
                     const ConvShape& s, const Tensor& dy, Tensor* dx,
                     std::span<float> dw) {
  const int pt = s.kt / 2, pf = s.kf / 2;
  for (int dt = 0; dt < s.kt; ++dt)
    for (int df = 0; df < s.kf; ++df)
      for (int ci = 0; ci < s.cin; ++ci)
        for (int co = 0; co < s.cout; ++co) {
          double acc = 0.0;
          for (int b = 0; b < x.batch; ++b)
            for (int t = 0; t < x.time; ++t)
              for (int f = 0; f < x.freq; ++f) {
                const int tt = t + dt - pt, ff = f + df - pf;
                if (tt < 0 || tt >= x.time || ff < 0 || ff >= x.freq) continue;
                acc += static_cast<double>(x.at(b, tt, ff, ci)) * dy.at(b, t, f, co);
              }
          dw[((static_cast<std::size_t>(dt) * s.kf + df) * s.cin + ci) * s.cout + co] +=
              static_cast<float>(acc);
        }
  if (dx == nullptr) return;
  dx->reshape_like(x);
  for (int b = 0; b < x.batch; ++b)
    for (int tt = 0; tt < x.time; ++tt)
      for (int ff = 0; ff < x.freq; ++ff)
        for (int ci = 0; ci < s.cin; ++ci) {
          double acc = 0.0;
          for (int dt = 0; dt < s.kt; ++dt)
            for (int df = 0; df < s.kf; ++df) {
              const int t = tt - dt + pt, f = ff - df + pf;
              if (t < 0 || t >= x.time || f < 0 || f >= x.freq) continue;
              for (int co = 0; co < s.cout; ++co)
                acc += static_cast<double>(dy.at(b, t, f, co)) *
                       w[((static_cast<std::size_t>(dt) * s.kf + df) * s.cin + ci) * s.cout + co];
            }
          dx->at(b, tt, ff, ci) = static_cast<float>(acc);
        }
}

void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma,
                             std::span<const float> beta, float eps, Tensor& y,
                             BatchNormCache& cache) {
  const int C = x.channels;
  const std::size_t n = x.size() / C;
  cache.mean.assign(C, 0.0f);
  cache.var.assign(C, 0.0f);
  cache.inv_std.assign(C, 0.0f);
  for (int c = 0; c < C; ++c) {
    double m = 0.0;
    for (std::size_t i = c; i < x.size(); i += C) m += x.data[i];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = c; i < x.size(); i += C) v += (x.data[i] - m) * (x.data[i] - m);
    v /= static_cast<double>(n);
    cache.mean[c] = static_cast<float>(m);
    cache.var[c] = static_cast<float>(v);
    cache.inv_std[c] = static_cast<float>(1.0 / std::sqrt(v + eps));
  }
  y.reshape_like(x);
  cache.xhat.reshape_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int c = static_cast<int>(i % C);
    const double xh = (x.data[i] - static_cast<double>(cache.mean[c])) * cache.inv_std[c];
    cache.xhat.data[i] = static_cast<float>(xh);
    y.data[i] = static_cast<float>(gamma[c] * xh + beta[c]);
  }
}

void batchnorm_backward(const BatchNormCache& cache,
                        std::span<const float> gamma, const Tensor& dy,
                        Tensor& dx, std::span<float> dgamma,
                        std::span<float> dbeta) {
  const int C = dy.channels;
  const double n = static_cast<double>(dy.size() / C);
  dx.reshape_like(dy);
  for (int c = 0; c < C; ++c) {
    double sdy = 0.0, sdyx = 0.0;
    for (std::size_t i = c; i < dy.size(); i += C) {
      sdy += dy.data[i];
      sdyx += static_cast<double>(dy.data[i]) * cache.xhat.data[i];
    }
    dgamma[c] += static_cast<float>(sdyx);
    dbeta[c] += static_cast<float>(sdy);
    for (std::size_t i = c; i < dy.size(); i += C) {
      dx.data[i] = static_cast<float>(
          gamma[c] * cache.inv_std[c] *
          (dy.data[i] - sdy / n - cache.xhat.data[i] * sdyx / n));
    }
  }
}

void maxpool_forward(const Tensor& x, int pool_t, int pool_f, Tensor& y,
                     std::vector<std::int64_t>& argmax) {
  y.resize(x.batch, x.time / pool_t, x.freq / pool_f, x.channels);
  argmax.assign(y.size(), -1);
  for (int b = 0; b < y.batch; ++b)
    for (int t = 0; t < y.time; ++t)
      for (int f = 0; f < y.freq; ++f)
        for (int c = 0; c < y.channels; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          for (int dt = 0; dt < pool_t; ++dt)
            for (int df = 0; df < pool_f; ++df) {
              const std::size_t i = x.index(b, t * pool_t + dt, f * pool_f + df, c);
              if (argmax[y.index(b, t, f, c)] < 0 || x.data[i] > best) {
                best = x.data[i];
                argmax[y.index(b, t, f, c)] = static_cast<std::int64_t>(i);
              }
            }
          y.at(b, t, f, c) = best;
        }
}

void dense_forward(std::span<const float> x, int rows, int in,
                   std::span<const float> w, std::span<const float> bias,
                   int out, std::span<float> y) {
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out; ++o) {
      double acc = bias[o];
      for (int i = 0; i < in; ++i)
        acc += static_cast<double>(x[static_cast<std::size_t>(r) * in + i]) *
               w[static_cast<std::size_t>(i) * out + o];
      y[static_cast<std::size_t>(r) * out + o] = static_cast<float>(acc);
    }
}

void dense_backward(std::span<const float> x, int rows, int in,
                    std::span<const float> w, int out,
                    std::span<const float> dy, std::span<float> dx,
                    std::span<float> dw, std::span<float> db) {
  for (int i = 0; i < in; ++i)
    for (int o = 0; o < out; ++o) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r)
        acc += static_cast<double>(x[static_cast<std::size_t>(r) * in + i]) *
               dy[static_cast<std::size_t>(r) * out + o];
      dw[static_cast<std::size_t>(i) * out + o] += static_cast<float>(acc);
    }
  for (int o = 0; o < out; ++o) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += dy[static_cast<std::size_t>(r) * out + o];
    db[o] += static_cast<float>(acc);
  }
  if (dx.empty()) return;
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out; ++o)
        acc += static_cast<double>(dy[static_cast<std::size_t>(r) * out + o]) *
               w[static_cast<std::size_t>(i) * out + o];
      dx[static_cast<std::size_t>(r) * in + i] = static_cast<float>(acc);
    }
}

}  // namespace gsed::kernels::reference
