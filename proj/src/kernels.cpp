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

#define EIGEN_DONT_PARALLELIZE
#include "gsed/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace gsed::kernels {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Unfold one sample into rows of (kt * kf * cin) values, one row per output
// position, zero outside the input.
void im2col(const Tensor& x, int b, const ConvShape& s, float* col) {
  const int T = x.time, F = x.freq, cin = s.cin;
  const int pt = s.kt / 2, pf = s.kf / 2;
  const std::size_t k = static_cast<std::size_t>(s.kt) * s.kf * cin;
  const float* xs = x.data.data() + b * x.sample_size();
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      float* row = col + (static_cast<std::size_t>(t) * F + f) * k;
      for (int dt = 0; dt < s.kt; ++dt) {
        const int tt = t + dt - pt;
        for (int df = 0; df < s.kf; ++df) {
          const int ff = f + df - pf;
          float* dst = row + (static_cast<std::size_t>(dt) * s.kf + df) * cin;
          if (tt < 0 || tt >= T || ff < 0 || ff >= F) {
            std::fill(dst, dst + cin, 0.0f);
          } else {
            std::memcpy(dst, xs + (static_cast<std::size_t>(tt) * F + ff) * cin,
                        sizeof(float) * cin);
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvShape& s, int T, int F, float* dxs) {
  const int cin = s.cin;
  const int pt = s.kt / 2, pf = s.kf / 2;
  const std::size_t k = static_cast<std::size_t>(s.kt) * s.kf * cin;
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      const float* row = col + (static_cast<std::size_t>(t) * F + f) * k;
      for (int dt = 0; dt < s.kt; ++dt) {
        const int tt = t + dt - pt;
        if (tt < 0 || tt >= T) continue;
        for (int df = 0; df < s.kf; ++df) {
          const int ff = f + df - pf;
          if (ff < 0 || ff >= F) continue;
          const float* src = row + (static_cast<std::size_t>(dt) * s.kf + df) * cin;
          float* dst = dxs + (static_cast<std::size_t>(tt) * F + ff) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}


// Direct convolution for narrow inputs (the first layer sees one channel),
// where im2col rows are too short for GEMM to pay off.
constexpr int kDirectMaxCin = 2;

// Copies one sample into a zero-bordered buffer so the direct loops need no
// bounds checks.
void pad_sample(const Tensor& x, int b, const ConvShape& s, std::vector<float>& buf) {
  const int pt = s.kt / 2, pf = s.kf / 2, cin = s.cin;
  const int Tp = x.time + 2 * pt, Fp = x.freq + 2 * pf;
  buf.assign(static_cast<std::size_t>(Tp) * Fp * cin, 0.0f);
  const float* xs = x.data.data() + b * x.sample_size();
  for (int t = 0; t < x.time; ++t)
    std::memcpy(buf.data() + (static_cast<std::size_t>(t + pt) * Fp + pf) * cin,
                xs + static_cast<std::size_t>(t) * x.freq * cin,
                sizeof(float) * x.freq * cin);
}

// Computes one output-channel plane at a time (contiguous along frequency),
// then interleaves the planes into channels-last order.
void conv_direct_forward_planes(const Tensor& x, int b, std::span<const float> w,
                                const ConvShape& s, float* ys) {
  const int T = x.time, F = x.freq, cin = s.cin, cout = s.cout;
  const int Fp = F + 2 * (s.kf / 2);
  std::vector<float> xp;
  pad_sample(x, b, s, xp);
  // De-interleave input channels so each plane row is contiguous.
  const int Tp = T + 2 * (s.kt / 2);
  std::vector<float> xplanes(static_cast<std::size_t>(cin) * Tp * Fp);
  for (std::size_t i = 0; i < static_cast<std::size_t>(Tp) * Fp; ++i)
    for (int ci = 0; ci < cin; ++ci) xplanes[ci * static_cast<std::size_t>(Tp) * Fp + i] = xp[i * cin + ci];
  std::vector<float> plane(static_cast<std::size_t>(T) * F);
  for (int co = 0; co < cout; ++co) {
    std::fill(plane.begin(), plane.end(), 0.0f);
    for (int ci = 0; ci < cin; ++ci) {
      const float* xpl = xplanes.data() + ci * static_cast<std::size_t>(Tp) * Fp;
      for (int dt = 0; dt < s.kt; ++dt)
        for (int df = 0; df < s.kf; ++df) {
          const float wv = w[((static_cast<std::size_t>(dt) * s.kf + df) * cin + ci) * cout + co];
          for (int t = 0; t < T; ++t) {
            const float* xr = xpl + static_cast<std::size_t>(t + dt) * Fp + df;
            float* pr = plane.data() + static_cast<std::size_t>(t) * F;
            for (int f = 0; f < F; ++f) pr[f] += wv * xr[f];
          }
        }
    }
    for (std::size_t i = 0; i < plane.size(); ++i) ys[i * cout + co] = plane[i];
  }
}

void conv_direct_forward(const Tensor& x, int b, std::span<const float> w,
                         const ConvShape& s, float* ys) {
  conv_direct_forward_planes(x, b, w, s, ys);
}

void conv_direct_backward(const Tensor& x, int b, std::span<const float> w,
                          const ConvShape& s, const float* dys, float* dws,
                          float* dxs) {
  const int T = x.time, F = x.freq, cin = s.cin, cout = s.cout;
  const int pt = s.kt / 2, pf = s.kf / 2;
  const int Tp = T + 2 * pt, Fp = F + 2 * pf;
  const std::size_t padded = static_cast<std::size_t>(Tp) * Fp;
  const std::size_t positions = static_cast<std::size_t>(T) * F;
  std::vector<float> xp;
  pad_sample(x, b, s, xp);
  std::vector<float> xplanes(cin * padded);
  for (std::size_t i = 0; i < padded; ++i)
    for (int ci = 0; ci < cin; ++ci) xplanes[ci * padded + i] = xp[i * cin + ci];
  std::vector<float> gplanes(cout * positions);
  for (std::size_t i = 0; i < positions; ++i)
    for (int co = 0; co < cout; ++co) gplanes[co * positions + i] = dys[i * cout + co];
  std::vector<float> dxplanes;
  if (dxs != nullptr) dxplanes.assign(cin * padded, 0.0f);
  std::vector<float> lanes(F);
  for (int co = 0; co < cout; ++co) {
    const float* gp = gplanes.data() + co * positions;
    for (int ci = 0; ci < cin; ++ci) {
      const float* xpl = xplanes.data() + ci * padded;
      for (int dt = 0; dt < s.kt; ++dt)
        for (int df = 0; df < s.kf; ++df) {
          const std::size_t wi = ((static_cast<std::size_t>(dt) * s.kf + df) * cin + ci) * cout + co;
          // Lane-wise partial sums; a scalar float reduction would not vectorize.
          std::fill(lanes.begin(), lanes.end(), 0.0f);
          for (int t = 0; t < T; ++t) {
            const float* xr = xpl + static_cast<std::size_t>(t + dt) * Fp + df;
            const float* gr = gp + static_cast<std::size_t>(t) * F;
            for (int f = 0; f < F; ++f) lanes[f] += xr[f] * gr[f];
          }
          float acc = 0.0f;
          for (int f = 0; f < F; ++f) acc += lanes[f];
          dws[wi] += acc;
          if (dxs != nullptr) {
            const float wv = w[wi];
            float* dpl = dxplanes.data() + ci * padded;
            for (int t = 0; t < T; ++t) {
              float* dr = dpl + static_cast<std::size_t>(t + dt) * Fp + df;
              const float* gr = gp + static_cast<std::size_t>(t) * F;
              for (int f = 0; f < F; ++f) dr[f] += wv * gr[f];
            }
          }
        }
    }
  }
  if (dxs == nullptr) return;
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f)
      for (int ci = 0; ci < cin; ++ci)
        dxs[(static_cast<std::size_t>(t) * F + f) * cin + ci] +=
            dxplanes[ci * padded + static_cast<std::size_t>(t + pt) * Fp + f + pf];
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void conv2d_forward(const Tensor& x, std::span<const float> w,
                    const ConvShape& s, Tensor& y) {
  y.resize(x.batch, x.time, x.freq, s.cout);
  const int M = x.time * x.freq;
  const int K = s.kt * s.kf * s.cin;
  ConstMapMat W(w.data(), K, s.cout);
  if (s.cin <= kDirectMaxCin) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < x.batch; ++b)
      conv_direct_forward(x, b, w, s, y.data.data() + b * y.sample_size());
    return;
  }
#pragma omp parallel
  {
    std::vector<float> col(static_cast<std::size_t>(M) * K);
#pragma omp for schedule(static)
    for (int b = 0; b < x.batch; ++b) {
      im2col(x, b, s, col.data());
      ConstMapMat C(col.data(), M, K);
      MapMat Y(y.data.data() + b * y.sample_size(), M, s.cout);
      Y.noalias() = C * W;
    }
  }
}

void conv2d_backward(const Tensor& x, std::span<const float> w,
                     const ConvShape& s, const Tensor& dy, Tensor* dx,
                     std::span<float> dw) {
  const int M = x.time * x.freq;
  const int K = s.kt * s.kf * s.cin;
  const std::size_t wsize = s.weight_count();
  ConstMapMat W(w.data(), K, s.cout);
  std::vector<float> partial(wsize * x.batch);
  if (dx != nullptr) dx->reshape_like(x);
  if (s.cin <= kDirectMaxCin) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < x.batch; ++b)
      conv_direct_backward(x, b, w, s, dy.data.data() + b * dy.sample_size(),
                           partial.data() + wsize * b,
                           dx != nullptr ? dx->data.data() + b * dx->sample_size() : nullptr);
  } else {
#pragma omp parallel
  {
    std::vector<float> col(static_cast<std::size_t>(M) * K);
    std::vector<float> dcol;
    if (dx != nullptr) dcol.resize(static_cast<std::size_t>(M) * K);
#pragma omp for schedule(static)
    for (int b = 0; b < x.batch; ++b) {
      im2col(x, b, s, col.data());
      ConstMapMat C(col.data(), M, K);
      ConstMapMat DY(dy.data.data() + b * dy.sample_size(), M, s.cout);
      MapMat DW(partial.data() + wsize * b, K, s.cout);
      DW.noalias() = C.transpose() * DY;
      if (dx != nullptr) {
        MapMat DC(dcol.data(), M, K);
        DC.noalias() = DY * W.transpose();
        col2im_add(dcol.data(), s, x.time, x.freq,
                   dx->data.data() + b * dx->sample_size());
      }
    }
  }
  }
  // Fixed-order reduction keeps dw independent of the thread count.
  for (int b = 0; b < x.batch; ++b) {
    const float* p = partial.data() + wsize * b;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += p[i];
  }
}

void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma,
                             std::span<const float> beta, float eps, Tensor& y,
                             BatchNormCache& cache) {
  const int C = x.channels;
  const std::size_t per_sample = x.sample_size();
  const std::size_t positions = per_sample / C;
  std::vector<double> sums(static_cast<std::size_t>(x.batch) * C);
  std::vector<double> sqsums(static_cast<std::size_t>(x.batch) * C);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.batch; ++b) {
    const float* xs = x.data.data() + b * per_sample;
    double* s1 = sums.data() + static_cast<std::size_t>(b) * C;
    for (std::size_t p = 0; p < positions; ++p)
      for (int c = 0; c < C; ++c) s1[c] += xs[p * C + c];
  }
  const double n = static_cast<double>(x.batch) * positions;
  std::vector<double> mean(C, 0.0);
  for (int b = 0; b < x.batch; ++b)
    for (int c = 0; c < C; ++c) mean[c] += sums[static_cast<std::size_t>(b) * C + c];
  for (int c = 0; c < C; ++c) mean[c] /= n;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.batch; ++b) {
    const float* xs = x.data.data() + b * per_sample;
    double* s2 = sqsums.data() + static_cast<std::size_t>(b) * C;
    for (std::size_t p = 0; p < positions; ++p)
      for (int c = 0; c < C; ++c) {
        const double d = xs[p * C + c] - mean[c];
        s2[c] += d * d;
      }
  }
  cache.mean.assign(C, 0.0f);
  cache.var.assign(C, 0.0f);
  cache.inv_std.assign(C, 0.0f);
  for (int c = 0; c < C; ++c) {
    double v = 0.0;
    for (int b = 0; b < x.batch; ++b) v += sqsums[static_cast<std::size_t>(b) * C + c];
    v /= n;
    cache.mean[c] = static_cast<float>(mean[c]);
    cache.var[c] = static_cast<float>(v);
    cache.inv_std[c] = static_cast<float>(1.0 / std::sqrt(v + eps));
  }
  y.reshape_like(x);
  cache.xhat.reshape_like(x);
  const std::size_t rows = x.size() / C;
  const float* mu = cache.mean.data();
  const float* is = cache.inv_std.data();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data.data() + r * C;
    float* hr = cache.xhat.data.data() + r * C;
    float* yr = y.data.data() + r * C;
    for (int c = 0; c < C; ++c) {
      const float xh = (xr[c] - mu[c]) * is[c];
      hr[c] = xh;
      yr[c] = gamma[c] * xh + beta[c];
    }
  }
}

void batchnorm_forward_eval(const Tensor& x, std::span<const float> gamma,
                            std::span<const float> beta,
                            std::span<const float> running_mean,
                            std::span<const float> running_var, float eps,
                            Tensor& y) {
  const int C = x.channels;
  std::vector<float> scale(C), shift(C);
  for (int c = 0; c < C; ++c) {
    scale[c] = gamma[c] / std::sqrt(running_var[c] + eps);
    shift[c] = beta[c] - running_mean[c] * scale[c];
  }
  y.reshape_like(x);
  const std::size_t rows = x.size() / C;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data.data() + r * C;
    float* yr = y.data.data() + r * C;
    for (int c = 0; c < C; ++c) yr[c] = xr[c] * scale[c] + shift[c];
  }
}

void batchnorm_backward(const BatchNormCache& cache,
                        std::span<const float> gamma, const Tensor& dy,
                        Tensor& dx, std::span<float> dgamma,
                        std::span<float> dbeta) {
  const Tensor& xhat = cache.xhat;
  const int C = dy.channels;
  const std::size_t per_sample = dy.sample_size();
  const std::size_t positions = per_sample / C;
  std::vector<double> s_dy(static_cast<std::size_t>(dy.batch) * C);
  std::vector<double> s_dyx(static_cast<std::size_t>(dy.batch) * C);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < dy.batch; ++b) {
    const float* g = dy.data.data() + b * per_sample;
    const float* xh = xhat.data.data() + b * per_sample;
    double* a = s_dy.data() + static_cast<std::size_t>(b) * C;
    double* bb = s_dyx.data() + static_cast<std::size_t>(b) * C;
    for (std::size_t p = 0; p < positions; ++p)
      for (int c = 0; c < C; ++c) {
        a[c] += g[p * C + c];
        bb[c] += static_cast<double>(g[p * C + c]) * xh[p * C + c];
      }
  }
  std::vector<double> sum_dy(C, 0.0), sum_dyx(C, 0.0);
  for (int b = 0; b < dy.batch; ++b)
    for (int c = 0; c < C; ++c) {
      sum_dy[c] += s_dy[static_cast<std::size_t>(b) * C + c];
      sum_dyx[c] += s_dyx[static_cast<std::size_t>(b) * C + c];
    }
  const double n = static_cast<double>(dy.batch) * positions;
  std::vector<float> k0(C), k1(C), k2(C);
  for (int c = 0; c < C; ++c) {
    dgamma[c] += static_cast<float>(sum_dyx[c]);
    dbeta[c] += static_cast<float>(sum_dy[c]);
    k0[c] = gamma[c] * cache.inv_std[c];
    k1[c] = static_cast<float>(sum_dy[c] / n);
    k2[c] = static_cast<float>(sum_dyx[c] / n);
  }
  dx.reshape_like(dy);
  const std::size_t rows = dy.size() / C;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy.data.data() + r * C;
    const float* xh = xhat.data.data() + r * C;
    float* d = dx.data.data() + r * C;
    for (int c = 0; c < C; ++c) d[c] = k0[c] * (g[c] - k1[c] - xh[c] * k2[c]);
  }
}

void relu_forward(Tensor& x) {
  const std::size_t total = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < total; ++i) x.data[i] = std::max(x.data[i], 0.0f);
}

void relu_backward(const Tensor& y, Tensor& dy) {
  const std::size_t total = y.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < total; ++i)
    dy.data[i] = y.data[i] > 0.0f ? dy.data[i] : 0.0f;
}

void maxpool_forward(const Tensor& x, int pool_t, int pool_f, Tensor& y,
                     std::vector<std::int64_t>& argmax) {
  const int To = x.time / pool_t, Fo = x.freq / pool_f, C = x.channels;
  y.resize(x.batch, To, Fo, C);
  argmax.resize(y.size());
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.batch; ++b) {
    for (int t = 0; t < To; ++t)
      for (int f = 0; f < Fo; ++f) {
        const std::size_t o = y.index(b, t, f, 0);
        float* yo = y.data.data() + o;
        std::int64_t* ao = argmax.data() + o;
        const auto first = static_cast<std::int64_t>(x.index(b, t * pool_t, f * pool_f, 0));
        for (int c = 0; c < C; ++c) {
          yo[c] = x.data[first + c];
          ao[c] = first + c;
        }
        for (int dt = 0; dt < pool_t; ++dt)
          for (int df = 0; df < pool_f; ++df) {
            if (dt == 0 && df == 0) continue;
            const auto base = static_cast<std::int64_t>(
                x.index(b, t * pool_t + dt, f * pool_f + df, 0));
            const float* xi = x.data.data() + base;
            for (int c = 0; c < C; ++c) {
              const bool take = xi[c] > yo[c];
              yo[c] = take ? xi[c] : yo[c];
              ao[c] = take ? base + c : ao[c];
            }
          }
      }
  }
}

void maxpool_backward(const Tensor& dy, const std::vector<std::int64_t>& argmax,
                      Tensor& dx) {
  std::fill(dx.data.begin(), dx.data.end(), 0.0f);
  // Pooling windows never overlap, so each input element has one writer.
#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[argmax[o]] += dy.data[o];
}

void dense_forward(std::span<const float> x, int rows, int in,
                   std::span<const float> w, std::span<const float> bias,
                   int out, std::span<float> y) {
  ConstMapMat X(x.data(), rows, in);
  ConstMapMat W(w.data(), in, out);
  MapMat Y(y.data(), rows, out);
  Eigen::Map<const Eigen::RowVectorXf> B(bias.data(), out);
  Y.noalias() = X * W;
  Y.rowwise() += B;
}

void dense_backward(std::span<const float> x, int rows, int in,
                    std::span<const float> w, int out,
                    std::span<const float> dy, std::span<float> dx,
                    std::span<float> dw, std::span<float> db) {
  ConstMapMat X(x.data(), rows, in);
  ConstMapMat W(w.data(), in, out);
  ConstMapMat DY(dy.data(), rows, out);
  MapMat DW(dw.data(), in, out);
  DW.noalias() += X.transpose() * DY;
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out; ++o) db[o] += dy[static_cast<std::size_t>(r) * out + o];
  if (!dx.empty()) {
    MapMat DX(dx.data(), rows, in);
    DX.noalias() = DY * W.transpose();
  }
}

}  // namespace gsed::kernels
