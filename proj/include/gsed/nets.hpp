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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsed/kernels.hpp"
#include "gsed/rng.hpp"
#include "gsed/tensor.hpp"
#include "json.hpp"

namespace gsed::nets {

enum class ModelKind { kPT, kPS };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// Convolution + batch normalization + ReLU.
struct CnnBlockSpec {
  int out_channels = 16;
  int kernel_t = 3;
  int kernel_f = 3;
  bool operator==(const CnnBlockSpec&) const = default;
};

// CNN block + max pooling + dropout.
struct CnnModuleSpec {
  CnnBlockSpec block;
  int pool_t = 1;
  int pool_f = 1;
  double dropout_rate = 0.0;
  bool operator==(const CnnModuleSpec&) const = default;
};

struct ModelSpec {
  ModelKind kind = ModelKind::kPS;
  int n_features = 64;  // mel bands at the input
  std::vector<CnnModuleSpec> modules;
  std::optional<CnnBlockSpec> tail;
  int n_classes = 5;
  double input_noise_std = 0.0;

  // Teacher: 4 temporally pooling modules (2,2,2,2) of 16 channels + tail
  // block, input noise 0.15, no dropout.
  static ModelSpec default_pt(int n_classes = 5, int n_features = 64);
  // Student: 3 modules with no temporal pooling and no dropout; temporal
  // kernels 3,5,5 give an 11-frame receptive field.
  static ModelSpec default_ps(int n_classes = 5, int n_features = 64);

  // Throws ConfigError when kind-specific constraints are violated.
  void validate() const;
  int temporal_pool_product() const;
  int output_frames(int input_frames) const;
  int output_freq() const;
  int last_channels() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  bool operator==(const ModelSpec&) const = default;
};

// Per-clip probabilities of one network for a batch.
struct ModelOutputs {
  int batch = 0;
  int frames = 0;  // native temporal resolution T'
  int classes = 0;
  std::vector<float> frame_probs;  // B x T' x C
  std::vector<float> clip_probs;   // B x C

  float frame_prob(int b, int t, int c) const {
    return frame_probs[(static_cast<std::size_t>(b) * frames + t) * classes + c];
  }
  float clip_prob(int b, int c) const { return clip_probs[static_cast<std::size_t>(b) * classes + c]; }
  MatrixF frame_matrix(int b) const;
  std::vector<float> clip_vector(int b) const;
};

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Class-wise softmax-over-time attention applied to sigmoid frame
// probabilities: clip_c = sum_t softmax_t(attn_.c)_t * sigmoid(frame_tc).
template <typename T>
std::vector<T> attention_pooling(const Matrix<T>& frame_logits, const Matrix<T>& attn_logits);

template <typename T>
struct AttentionGrad {
  Matrix<T> d_frame_logits;
  Matrix<T> d_attn_logits;
};

// Vector-Jacobian product of attention_pooling for upstream d_clip (C).
template <typename T>
AttentionGrad<T> attention_pooling_backward(const Matrix<T>& frame_logits,
                                            const Matrix<T>& attn_logits,
                                            std::span<const T> d_clip);

// x + N(0, std^2) elementwise in training; identity otherwise.
void gaussian_input_noise(Tensor& x, double std, Rng& rng, bool training);

// Nearest-neighbour upsampling along time: output t copies source frame
// floor(t * T' / target_frames).
MatrixF restore_frames(const MatrixF& frame_probs, int target_frames);

// Input frames that influence one output frame (kernels and pools composed).
int temporal_receptive_field(const ModelSpec& spec);

// Trainable parameters implied by the spec's shapes.
std::int64_t count_params(const ModelSpec& spec);

struct ParamRef {
  std::string name;
  std::span<float> value;
  std::span<float> grad;
};

class Network {
 public:
  Network(const ModelSpec& spec, std::uint64_t seed);
  ~Network();
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const ModelSpec& spec() const { return spec_; }

  // Training mode uses batch statistics, input noise and dropout drawn from
  // rng, and keeps the activations needed by backward(). Inference mode uses
  // running statistics and needs no rng.
  ModelOutputs forward(const Tensor& x, bool training, Rng* rng = nullptr);
  // Accumulates parameter gradients for d(loss)/d(clip_probs) (B x C) of the
  // last training forward pass.
  void backward(std::span<const float> d_clip_probs);
  void zero_grad();

  std::vector<ParamRef> parameters();
  std::int64_t parameter_count() const;
  // Non-trainable state (batch-norm running statistics).
  std::vector<std::span<float>> buffers();

  std::vector<float> flat_parameters() const;
  std::vector<float> flat_buffers() const;
  void set_flat_parameters(std::span<const float> v);
  void set_flat_buffers(std::span<const float> v);

 private:
  struct Impl;
  ModelSpec spec_;
  std::unique_ptr<Impl> impl_;
};

// Checkpoint directory: meta.json (spec, epoch, rng state, parameter layout)
// + weights.bin (float32 parameters then buffers, little-endian, in the order
// meta.json lists them).
struct CheckpointMeta {
  ModelSpec spec;
  int epoch = 0;
  std::string rng_state;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& dir, Network& net, const CheckpointMeta& meta);
// Rejects checkpoints whose spec differs from expected_spec when given.
Network load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta_out = nullptr,
                        const ModelSpec* expected_spec = nullptr);

}  // namespace gsed::nets
