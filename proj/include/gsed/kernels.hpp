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

// Compute kernels behind the network layers.
//
// Two implementations share one interface: the default namespace holds the
// OpenMP-parallel versions used for training (im2col + GEMM convolutions,
// per-sample partial reductions summed in a fixed order so results do not
// depend on the thread count), and `reference` holds straightforward serial
// loops accumulating in double precision. The reference versions exist for
// the kernel tests and the benchmark target; nothing on the training path
// calls them.

#include <cstdint>
#include <span>
#include <vector>

#include "gsed/tensor.hpp"

namespace gsed::kernels {

// Weights are stored [kt][kf][cin][cout]; padding is "same" (zero) with an
// odd kernel in both axes.
struct ConvShape {
  int kt = 1;
  int kf = 1;
  int cin = 1;
  int cout = 1;
  std::size_t weight_count() const {
    return static_cast<std::size_t>(kt) * kf * cin * cout;
  }
};

struct BatchNormCache {
  std::vector<float> mean;
  std::vector<float> inv_std;
  std::vector<float> var;  // biased batch variance
  Tensor xhat;
};

void conv2d_forward(const Tensor& x, std::span<const float> w,
                    const ConvShape& shape, Tensor& y);
// Accumulates into dw; writes dx when non-null.
void conv2d_backward(const Tensor& x, std::span<const float> w,
                     const ConvShape& shape, const Tensor& dy, Tensor* dx,
                     std::span<float> dw);

// Per-channel normalization over (batch, time, freq) using batch statistics.
void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma,
                             std::span<const float> beta, float eps, Tensor& y,
                             BatchNormCache& cache);
void batchnorm_forward_eval(const Tensor& x, std::span<const float> gamma,
                            std::span<const float> beta,
                            std::span<const float> running_mean,
                            std::span<const float> running_var, float eps,
                            Tensor& y);
// Accumulates into dgamma/dbeta.
void batchnorm_backward(const BatchNormCache& cache,
                        std::span<const float> gamma, const Tensor& dy,
                        Tensor& dx, std::span<float> dgamma,
                        std::span<float> dbeta);

void relu_forward(Tensor& x);
// Masks dy in place where the forward output was zero.
void relu_backward(const Tensor& y, Tensor& dy);

// Non-overlapping max pooling with floor semantics on both axes. argmax
// receives the flat input index of each selected element.
void maxpool_forward(const Tensor& x, int pool_t, int pool_f, Tensor& y,
                     std::vector<std::int64_t>& argmax);
void maxpool_backward(const Tensor& dy, const std::vector<std::int64_t>& argmax,
                      Tensor& dx);

// y[rows x out] = x[rows x in] * w[in x out] + bias.
void dense_forward(std::span<const float> x, int rows, int in,
                   std::span<const float> w, std::span<const float> bias,
                   int out, std::span<float> y);
// Accumulates into dw/db; writes dx when non-empty.
void dense_backward(std::span<const float> x, int rows, int in,
                    std::span<const float> w, int out,
                    std::span<const float> dy, std::span<float> dx,
                    std::span<float> dw, std::span<float> db);

namespace reference {

void conv2d_forward(const Tensor& x, std::span<const float> w,
                    const ConvShape& shape, Tensor& y);
void conv2d_backward(const Tensor& x, std::span<const float> w,
                     const ConvShape& shape, const Tensor& dy, Tensor* dx,
                     std::span<float> dw);
void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma,
                             std::span<const float> beta, float eps, Tensor& y,
                             BatchNormCache& cache);
void batchnorm_backward(const BatchNormCache& cache,
                        std::span<const float> gamma, const Tensor& dy,
                        Tensor& dx, std::span<float> dgamma,
                        std::span<float> dbeta);
void maxpool_forward(const Tensor& x, int pool_t, int pool_f, Tensor& y,
                     std::vector<std::int64_t>& argmax);
void dense_forward(std::span<const float> x, int rows, int in,
                   std::span<const float> w, std::span<const float> bias,
                   int out, std::span<float> y);
void dense_backward(std::span<const float> x, int rows, int in,
                    std::span<const float> w, int out,
                    std::span<const float> dy, std::span<float> dx,
                    std::span<float> dw, std::span<float> db);

}  // namespace reference

// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace gsed::kernels
