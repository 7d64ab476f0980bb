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

#include "gsed/nets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gsed/error.hpp"

namespace gsed::nets {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

bool odd_positive(int k) { return k >= 1 && k % 2 == 1; }

void validate_block(const CnnBlockSpec& b, const std::string& where) {
  if (b.out_channels < 1) throw ConfigError(where + ": out_channels must be >= 1");
  if (!odd_positive(b.kernel_t) || !odd_positive(b.kernel_f))
    throw ConfigError(where + ": kernel dimensions must be odd and >= 1");
}

json block_json(const CnnBlockSpec& b) {
  return {{"out_channels", b.out_channels}, {"kernel", {b.kernel_t, b.kernel_f}}};
}

CnnBlockSpec block_from_json(const json& j) {
  return {j.at("out_channels").get<int>(), j.at("kernel").at(0).get<int>(),
          j.at("kernel").at(1).get<int>()};
}

struct BatchNorm {
  int channels = 0;
  std::vector<float> gamma, beta, dgamma, dbeta, running_mean, running_var;
  kernels::BatchNormCache cache;

  explicit BatchNorm(int c = 0)
      : channels(c), gamma(c, 1.0f), beta(c, 0.0f), dgamma(c, 0.0f), dbeta(c, 0.0f),
        running_mean(c, 0.0f), running_var(c, 1.0f) {}

  void forward(const Tensor& x, bool training, Tensor& y) {
    if (!training) {
      kernels::batchnorm_forward_eval(x, gamma, beta, running_mean, running_var, kBnEps, y);
      return;
    }
    kernels::batchnorm_forward_train(x, gamma, beta, kBnEps, y, cache);
    const double n = static_cast<double>(x.size()) / channels;
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    for (int c = 0; c < channels; ++c) {
      running_mean[c] = (1.0f - kBnMomentum) * running_mean[c] + kBnMomentum * cache.mean[c];
      running_var[c] = (1.0f - kBnMomentum) * running_var[c] +
                       kBnMomentum * static_cast<float>(cache.var[c] * unbias);
    }
  }
  void backward(const Tensor& dy, Tensor& dx) {
    kernels::batchnorm_backward(cache, gamma, dy, dx, dgamma, dbeta);
  }
};

struct ConvBlock {
  kernels::ConvShape shape;
  std::vector<float> weight, dweight;
  BatchNorm bn;
  Tensor input;     // conv input
  Tensor conv_out;  // pre-normalization
  Tensor act;       // post-ReLU

  ConvBlock() = default;
  ConvBlock(const CnnBlockSpec& s, int cin)
      : shape{s.kernel_t, s.kernel_f, cin, s.out_channels},
        weight(shape.weight_count()), dweight(shape.weight_count(), 0.0f), bn(s.out_channels) {}

  void forward(Tensor x, bool training) {
    input = std::move(x);
    kernels::conv2d_forward(input, weight, shape, conv_out);
    bn.forward(conv_out, training, act);
    kernels::relu_forward(act);
  }
  // dy is the gradient w.r.t. act; returns gradient w.r.t. input.
  Tensor backward(Tensor dy, bool need_dx) {
    kernels::relu_backward(act, dy);
    Tensor dconv;
    bn.backward(dy, dconv);
    Tensor dx;
    kernels::conv2d_backward(input, weight, shape, dconv, need_dx ? &dx : nullptr, dweight);
    return dx;
  }
};

struct CnnModule {
  ConvBlock block;
  int pool_t = 1, pool_f = 1;
  float dropout = 0.0f;
  Tensor pooled;
  std::vector<std::int64_t> argmax;
  std::vector<std::uint8_t> keep;
  bool dropout_active = false;
};

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec

std::string to_string(ModelKind k) { return k == ModelKind::kPT ? "PT" : "PS"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "PT" || s == "pt") return ModelKind::kPT;
  if (s == "PS" || s == "ps") return ModelKind::kPS;
  throw ConfigError("unknown model kind '" + s + "'");
}

ModelSpec ModelSpec::default_pt(int n_classes, int n_features) {
  ModelSpec s;
  s.kind = ModelKind::kPT;
  s.n_features = n_features;
  s.n_classes = n_classes;
  s.input_noise_std = 0.15;
  const int fpools[4] = {4, 2, 2, 2};
  for (int i = 0; i < 4; ++i) s.modules.push_back({{16, 3, 3}, 2, fpools[i], 0.0});
  s.tail = CnnBlockSpec{16, 3, 3};
  return s;
}

ModelSpec ModelSpec::default_ps(int n_classes, int n_features) {
  ModelSpec s;
  s.kind = ModelKind::kPS;
  s.n_features = n_features;
  s.n_classes = n_classes;
  s.input_noise_std = 0.0;
  s.modules.push_back({{8, 3, 3}, 1, 4, 0.0});
  s.modules.push_back({{16, 5, 3}, 1, 4, 0.0});
  s.modules.push_back({{32, 5, 3}, 1, 2, 0.0});
  return s;
}

void ModelSpec::validate() const {
  if (n_features < 1) throw ConfigError("n_features must be >= 1");
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (!(input_noise_std >= 0.0)) throw ConfigError("input_noise_std must be >= 0");
  for (std::size_t i = 0; i < modules.size(); ++i) {
    const auto& m = modules[i];
    validate_block(m.block, "module " + std::to_string(i));
    if (m.pool_t < 1 || m.pool_f < 1) throw ConfigError("pool dimensions must be >= 1");
    if (!(m.dropout_rate >= 0.0 && m.dropout_rate < 1.0))
      throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  if (tail) validate_block(*tail, "tail block");
  if (kind == ModelKind::kPT) {
    if (modules.size() != 4 || !tail)
      throw ConfigError("PT model needs 4 CNN modules and a tail block");
    if (temporal_pool_product() < 2) throw ConfigError("PT model must pool along time");
  } else {
    if (modules.size() != 3 || tail) throw ConfigError("PS model needs 3 CNN modules and no tail");
    for (const auto& m : modules) {
      if (m.pool_t != 1) throw ConfigError("PS model must not pool along time");
      if (m.dropout_rate != 0.0) throw ConfigError("PS model modules carry no dropout");
    }
  }
  if (output_freq() < 1) throw ConfigError("frequency pooling leaves no bins");
}

int ModelSpec::temporal_pool_product() const {
  int p = 1;
  for (const auto& m : modules) p *= m.pool_t;
  return p;
}

int ModelSpec::output_frames(int input_frames) const {
  int t = input_frames;
  for (const auto& m : modules) t /= m.pool_t;
  return t;
}

int ModelSpec::output_freq() const {
  int f = n_features;
  for (const auto& m : modules) f /= m.pool_f;
  return f;
}

int ModelSpec::last_channels() const {
  if (tail) return tail->out_channels;
  if (!modules.empty()) return modules.back().block.out_channels;
  return 1;
}

json ModelSpec::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["n_features"] = n_features;
  j["n_classes"] = n_classes;
  j["input_noise_std"] = input_noise_std;
  json mods = json::array();
  for (const auto& m : modules) {
    json mj = block_json(m.block);
    mj["pool"] = {m.pool_t, m.pool_f};
    mj["dropout"] = m.dropout_rate;
    mods.push_back(mj);
  }
  j["modules"] = mods;
  j["tail"] = tail ? block_json(*tail) : json(nullptr);
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  s.n_features = j.at("n_features").get<int>();
  s.n_classes = j.at("n_classes").get<int>();
  s.input_noise_std = j.at("input_noise_std").get<double>();
  for (const auto& mj : j.at("modules")) {
    CnnModuleSpec m;
    m.block = block_from_json(mj);
    m.pool_t = mj.at("pool").at(0).get<int>();
    m.pool_f = mj.at("pool").at(1).get<int>();
    m.dropout_rate = mj.at("dropout").get<double>();
    s.modules.push_back(m);
  }
  if (j.contains("tail") && !j["tail"].is_null()) s.tail = block_from_json(j["tail"]);
  return s;
}

MatrixF ModelOutputs::frame_matrix(int b) const {
  MatrixF m(frames, classes);
  std::copy_n(frame_probs.begin() + static_cast<std::ptrdiff_t>(b) * frames * classes,
              static_cast<std::size_t>(frames) * classes, m.data.begin());
  return m;
}

std::vector<float> ModelOutputs::clip_vector(int b) const {
  return {clip_probs.begin() + static_cast<std::ptrdiff_t>(b) * classes,
          clip_probs.begin() + static_cast<std::ptrdiff_t>(b + 1) * classes};
}

// ---------------------------------------------------------------------------
// Free operations

template <typename T>
std::vector<T> attention_pooling(const Matrix<T>& frame_logits, const Matrix<T>& attn_logits) {
  if (frame_logits.rows != attn_logits.rows || frame_logits.cols != attn_logits.cols)
    throw ValidationError("attention_pooling: shape mismatch");
  const int frames = frame_logits.rows, classes = frame_logits.cols;
  std::vector<T> clip(classes, T(0));
  for (int c = 0; c < classes; ++c) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int t = 0; t < frames; ++t) mx = std::max(mx, attn_logits(t, c));
    T z = T(0), acc = T(0);
    for (int t = 0; t < frames; ++t) {
      const T e = std::exp(attn_logits(t, c) - mx);
      z += e;
      acc += e * sigmoid(frame_logits(t, c));
    }
    clip[c] = std::clamp(acc / z, T(0), T(1));
  }
  return clip;
}

template <typename T>
AttentionGrad<T> attention_pooling_backward(const Matrix<T>& frame_logits,
                                            const Matrix<T>& attn_logits,
                                            std::span<const T> d_clip) {
  const int frames = frame_logits.rows, classes = frame_logits.cols;
  AttentionGrad<T> g{Matrix<T>(frames, classes), Matrix<T>(frames, classes)};
  std::vector<T> w(frames), p(frames);
  for (int c = 0; c < classes; ++c) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int t = 0; t < frames; ++t) mx = std::max(mx, attn_logits(t, c));
    T z = T(0);
    for (int t = 0; t < frames; ++t) {
      w[t] = std::exp(attn_logits(t, c) - mx);
      z += w[t];
    }
    T clip = T(0);
    for (int t = 0; t < frames; ++t) {
      w[t] /= z;
      p[t] = sigmoid(frame_logits(t, c));
      clip += w[t] * p[t];
    }
    for (int t = 0; t < frames; ++t) {
      g.d_frame_logits(t, c) = d_clip[c] * w[t] * p[t] * (T(1) - p[t]);
      g.d_attn_logits(t, c) = d_clip[c] * w[t] * (p[t] - clip);
    }
  }
  return g;
}

template std::vector<float> attention_pooling(const MatrixF&, const MatrixF&);
template std::vector<double> attention_pooling(const MatrixD&, const MatrixD&);
template AttentionGrad<float> attention_pooling_backward(const MatrixF&, const MatrixF&,
                                                         std::span<const float>);
template AttentionGrad<double> attention_pooling_backward(const MatrixD&, const MatrixD&,
                                                          std::span<const double>);

void gaussian_input_noise(Tensor& x, double std, Rng& rng, bool training) {
  if (!(std >= 0.0)) throw ConfigError("noise std must be >= 0");
  if (!training || std == 0.0) return;
  std::normal_distribution<float> dist(0.0f, static_cast<float>(std));
  for (float& v : x.data) v += dist(rng.engine());
}

MatrixF restore_frames(const MatrixF& frame_probs, int target_frames) {
  const int src = frame_probs.rows;
  if (src == 0) throw ValidationError("restore_frames: no source frames");
  if (src > target_frames) throw ValidationError("restore_frames: source longer than target");
  MatrixF out(target_frames, frame_probs.cols);
  for (int t = 0; t < target_frames; ++t) {
    const int s = static_cast<int>(static_cast<std::int64_t>(t) * src / target_frames);
    std::copy_n(frame_probs.row(s).begin(), frame_probs.cols, out.row(t).begin());
  }
  return out;
}

int temporal_receptive_field(const ModelSpec& spec) {
  int rf = 1, jump = 1;
  for (const auto& m : spec.modules) {
    rf += (m.block.kernel_t - 1) * jump;
    rf += (m.pool_t - 1) * jump;
    jump *= m.pool_t;
  }
  if (spec.tail) rf += (spec.tail->kernel_t - 1) * jump;
  return rf;
}

std::int64_t count_params(const ModelSpec& spec) {
  std::int64_t n = 2LL * spec.n_features;  // input batch norm
  int cin = 1;
  auto block = [&](const CnnBlockSpec& b) {
    n += static_cast<std::int64_t>(b.kernel_t) * b.kernel_f * cin * b.out_channels;
    n += 2LL * b.out_channels;
    cin = b.out_channels;
  };
  for (const auto& m : spec.modules) block(m.block);
  if (spec.tail) block(*spec.tail);
  const std::int64_t dense_in = static_cast<std::int64_t>(spec.output_freq()) * spec.last_channels();
  n += dense_in * 2 * spec.n_classes + 2LL * spec.n_classes;
  return n;
}

// ---------------------------------------------------------------------------
// Network

struct Network::Impl {
  BatchNorm input_bn;
  std::vector<CnnModule> modules;
  std::optional<ConvBlock> tail;
  int dense_in = 0, dense_out = 0;
  std::vector<float> dense_w, dense_b, dense_dw, dense_db;

  // Forward cache.
  int batch = 0, frames = 0, classes = 0;
  Tensor dense_input;
  std::vector<float> logits;  // rows x 2C
  int in_time = 0, in_freq = 0;
  bool has_cache = false;
};

Network::Network(const ModelSpec& spec, std::uint64_t seed) : spec_(spec), impl_(std::make_unique<Impl>()) {
  spec_.validate();
  Impl& m = *impl_;
  Rng rng(seed);
  m.input_bn = BatchNorm(spec_.n_features);
  auto init_conv = [&](ConvBlock& b) {
    const double bound = std::sqrt(6.0 / (b.shape.kt * b.shape.kf * b.shape.cin));
    for (float& w : b.weight) w = static_cast<float>(rng.uniform(-bound, bound));
  };
  int cin = 1;
  for (const auto& ms : spec_.modules) {
    CnnModule mod;
    mod.block = ConvBlock(ms.block, cin);
    init_conv(mod.block);
    mod.pool_t = ms.pool_t;
    mod.pool_f = ms.pool_f;
    mod.dropout = static_cast<float>(ms.dropout_rate);
    m.modules.push_back(std::move(mod));
    cin = ms.block.out_channels;
  }
  if (spec_.tail) {
    m.tail = ConvBlock(*spec_.tail, cin);
    init_conv(*m.tail);
  }
  m.dense_in = spec_.output_freq() * spec_.last_channels();
  m.dense_out = 2 * spec_.n_classes;
  m.dense_w.resize(static_cast<std::size_t>(m.dense_in) * m.dense_out);
  const double bound = std::sqrt(6.0 / (m.dense_in + m.dense_out));
  for (float& w : m.dense_w) w = static_cast<float>(rng.uniform(-bound, bound));
  m.dense_b.assign(m.dense_out, 0.0f);
  m.dense_dw.assign(m.dense_w.size(), 0.0f);
  m.dense_db.assign(m.dense_out, 0.0f);
}

Network::~Network() = default;
Network::Network(const Network& other) : spec_(other.spec_), impl_(std::make_unique<Impl>(*other.impl_)) {}
Network& Network::operator=(const Network& other) {
  if (this != &other) {
    spec_ = other.spec_;
    impl_ = std::make_unique<Impl>(*other.impl_);
  }
  return *this;
}
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

ModelOutputs Network::forward(const Tensor& x, bool training, Rng* rng) {
  Impl& m = *impl_;
  if (x.channels != 1 || x.freq != spec_.n_features)
    throw ValidationError("network input must be B x T x " + std::to_string(spec_.n_features) + " x 1");
  if (spec_.output_frames(x.time) < 1)
    throw ValidationError("input too short for the network's temporal pooling");
  if (training && rng == nullptr && (spec_.input_noise_std > 0.0 ||
                                     std::any_of(m.modules.begin(), m.modules.end(),
                                                 [](const CnnModule& mod) { return mod.dropout > 0.0f; })))
    throw ValidationError("training forward needs a random stream");

  Tensor h = x;
  if (training && spec_.input_noise_std > 0.0) gaussian_input_noise(h, spec_.input_noise_std, *rng, true);

  // Input normalization is per mel band: view the band axis as channels.
  m.in_time = x.time;
  m.in_freq = x.freq;
  h.channels = h.freq;
  h.freq = 1;
  Tensor normed;
  m.input_bn.forward(h, training, normed);
  normed.freq = normed.channels;
  normed.channels = 1;
  h = std::move(normed);

  for (auto& mod : m.modules) {
    mod.block.forward(std::move(h), training);
    if (mod.pool_t == 1 && mod.pool_f == 1) {
      mod.pooled = mod.block.act;
    } else {
      kernels::maxpool_forward(mod.block.act, mod.pool_t, mod.pool_f, mod.pooled, mod.argmax);
    }
    h = mod.pooled;
    mod.dropout_active = training && mod.dropout > 0.0f;
    if (mod.dropout_active) {
      const float scale = 1.0f / (1.0f - mod.dropout);
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      mod.keep.resize(h.size());
      for (std::size_t i = 0; i < h.size(); ++i) {
        mod.keep[i] = u(rng->engine()) >= mod.dropout ? 1 : 0;
        h.data[i] = mod.keep[i] ? h.data[i] * scale : 0.0f;
      }
    }
  }
  if (m.tail) {
    m.tail->forward(std::move(h), training);
    h = m.tail->act;
  }

  const int B = h.batch, Tn = h.time, C = spec_.n_classes;
  const int rows = B * Tn;
  m.dense_input = std::move(h);
  m.logits.assign(static_cast<std::size_t>(rows) * m.dense_out, 0.0f);
  kernels::dense_forward(m.dense_input.data, rows, m.dense_in, m.dense_w, m.dense_b, m.dense_out, m.logits);

  ModelOutputs out;
  out.batch = B;
  out.frames = Tn;
  out.classes = C;
  out.frame_probs.resize(static_cast<std::size_t>(rows) * C);
  out.clip_probs.resize(static_cast<std::size_t>(B) * C);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    MatrixF fl(Tn, C), al(Tn, C);
    for (int t = 0; t < Tn; ++t)
      for (int c = 0; c < C; ++c) {
        const std::size_t r = (static_cast<std::size_t>(b) * Tn + t) * m.dense_out;
        fl(t, c) = m.logits[r + c];
        al(t, c) = m.logits[r + C + c];
        out.frame_probs[(static_cast<std::size_t>(b) * Tn + t) * C + c] = sigmoid(fl(t, c));
      }
    const auto clip = attention_pooling(fl, al);
    std::copy(clip.begin(), clip.end(), out.clip_probs.begin() + static_cast<std::ptrdiff_t>(b) * C);
  }
  m.batch = B;
  m.frames = Tn;
  m.classes = C;
  m.has_cache = training;
  return out;
}

void Network::backward(std::span<const float> d_clip) {
  Impl& m = *impl_;
  if (!m.has_cache) throw ValidationError("backward() needs a preceding training forward()");
  const int B = m.batch, Tn = m.frames, C = m.classes;
  if (d_clip.size() != static_cast<std::size_t>(B) * C) throw ValidationError("backward: gradient shape mismatch");
  const int rows = B * Tn;
  std::vector<float> dlogits(static_cast<std::size_t>(rows) * m.dense_out, 0.0f);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    MatrixF fl(Tn, C), al(Tn, C);
    for (int t = 0; t < Tn; ++t)
      for (int c = 0; c < C; ++c) {
        const std::size_t r = (static_cast<std::size_t>(b) * Tn + t) * m.dense_out;
        fl(t, c) = m.logits[r + c];
        al(t, c) = m.logits[r + C + c];
      }
    const auto g = attention_pooling_backward<float>(fl, al, d_clip.subspan(static_cast<std::size_t>(b) * C, C));
    for (int t = 0; t < Tn; ++t)
      for (int c = 0; c < C; ++c) {
        const std::size_t r = (static_cast<std::size_t>(b) * Tn + t) * m.dense_out;
        dlogits[r + c] = g.d_frame_logits(t, c);
        dlogits[r + C + c] = g.d_attn_logits(t, c);
      }
  }

  Tensor dh;
  dh.reshape_like(m.dense_input);
  kernels::dense_backward(m.dense_input.data, rows, m.dense_in, m.dense_w, m.dense_out, dlogits, dh.data,
                          m.dense_dw, m.dense_db);
  if (m.tail) dh = m.tail->backward(std::move(dh), true);
  for (std::size_t i = m.modules.size(); i-- > 0;) {
    auto& mod = m.modules[i];
    if (mod.dropout_active) {
      const float scale = 1.0f / (1.0f - mod.dropout);
      for (std::size_t k = 0; k < dh.size(); ++k) dh.data[k] = mod.keep[k] ? dh.data[k] * scale : 0.0f;
    }
    Tensor dact;
    if (mod.pool_t == 1 && mod.pool_f == 1) {
      dact = std::move(dh);
    } else {
      dact.reshape_like(mod.block.act);
      kernels::maxpool_backward(dh, mod.argmax, dact);
    }
    dh = mod.block.backward(std::move(dact), true);
  }
  // dh is now d(normalized input); back through the per-band input norm.
  dh.channels = dh.freq;
  dh.freq = 1;
  Tensor dx;
  m.input_bn.backward(dh, dx);
}

void Network::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

std::vector<ParamRef> Network::parameters() {
  Impl& m = *impl_;
  std::vector<ParamRef> ps;
  auto bn = [&](BatchNorm& b, const std::string& prefix) {
    ps.push_back({prefix + ".gamma", b.gamma, b.dgamma});
    ps.push_back({prefix + ".beta", b.beta, b.dbeta});
  };
  bn(m.input_bn, "input_bn");
  for (std::size_t i = 0; i < m.modules.size(); ++i) {
    const std::string p = "module" + std::to_string(i);
    ps.push_back({p + ".conv.weight", m.modules[i].block.weight, m.modules[i].block.dweight});
    bn(m.modules[i].block.bn, p + ".bn");
  }
  if (m.tail) {
    ps.push_back({"tail.conv.weight", m.tail->weight, m.tail->dweight});
    bn(m.tail->bn, "tail.bn");
  }
  ps.push_back({"dense.weight", m.dense_w, m.dense_dw});
  ps.push_back({"dense.bias", m.dense_b, m.dense_db});
  return ps;
}

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : const_cast<Network*>(this)->parameters()) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

std::vector<std::span<float>> Network::buffers() {
  Impl& m = *impl_;
  std::vector<std::span<float>> bs;
  auto bn = [&](BatchNorm& b) {
    bs.push_back(b.running_mean);
    bs.push_back(b.running_var);
  };
  bn(m.input_bn);
  for (auto& mod : m.modules) bn(mod.block.bn);
  if (m.tail) bn(m.tail->bn);
  return bs;
}

std::vector<float> Network::flat_parameters() const {
  std::vector<float> v;
  for (const auto& p : const_cast<Network*>(this)->parameters()) v.insert(v.end(), p.value.begin(), p.value.end());
  return v;
}

std::vector<float> Network::flat_buffers() const {
  std::vector<float> v;
  for (const auto& b : const_cast<Network*>(this)->buffers()) v.insert(v.end(), b.begin(), b.end());
  return v;
}

void Network::set_flat_parameters(std::span<const float> v) {
  std::size_t off = 0;
  for (auto& p : parameters()) {
    if (off + p.value.size() > v.size()) throw ValidationError("parameter vector too short");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.begin());
    off += p.value.size();
  }
  if (off != v.size()) throw ValidationError("parameter vector too long");
}

void Network::set_flat_buffers(std::span<const float> v) {
  std::size_t off = 0;
  for (auto& b : buffers()) {
    if (off + b.size() > v.size()) throw ValidationError("buffer vector too short");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
    off += b.size();
  }
  if (off != v.size()) throw ValidationError("buffer vector too long");
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& dir, Network& net, const CheckpointMeta& meta) {
  fs::create_directories(dir);
  json j;
  j["format"] = "gsed-checkpoint-1";
  j["spec"] = net.spec().to_json();
  j["epoch"] = meta.epoch;
  j["rng_state"] = meta.rng_state;
  json layout = json::array();
  for (const auto& p : net.parameters()) layout.push_back({{"name", p.name}, {"size", p.value.size()}});
  j["parameters"] = layout;
  j["buffer_floats"] = net.flat_buffers().size();
  j["extra"] = meta.extra;
  {
    std::ofstream os(dir / "meta.json");
    if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
    os << j.dump(2) << '\n';
  }
  std::ofstream os(dir / "weights.bin", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "weights.bin").string());
  const auto params = net.flat_parameters();
  const auto bufs = net.flat_buffers();
  os.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(bufs.data()), static_cast<std::streamsize>(bufs.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + (dir / "weights.bin").string());
}

Network load_checkpoint(const fs::path& dir, CheckpointMeta* meta_out, const ModelSpec* expected_spec) {
  std::ifstream ms(dir / "meta.json");
  if (!ms) throw IoError("missing checkpoint metadata in " + dir.string());
  json j;
  try {
    j = json::parse(ms);
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint metadata in " + dir.string() + ": " + e.what());
  }
  const ModelSpec spec = ModelSpec::from_json(j.at("spec"));
  if (expected_spec != nullptr && !(spec == *expected_spec))
    throw ValidationError("checkpoint spec in " + dir.string() + " does not match the requested model");
  Network net(spec, 0);
  std::size_t i = 0;
  const auto params = net.parameters();
  if (j.at("parameters").size() != params.size())
    throw ValidationError("checkpoint parameter layout does not match its spec");
  for (const auto& p : params) {
    const auto& e = j["parameters"][i++];
    if (e.at("name").get<std::string>() != p.name || e.at("size").get<std::size_t>() != p.value.size())
      throw ValidationError("checkpoint parameter layout does not match its spec");
  }
  std::vector<float> pv(static_cast<std::size_t>(net.parameter_count()));
  std::vector<float> bv(j.at("buffer_floats").get<std::size_t>());
  std::ifstream ws(dir / "weights.bin", std::ios::binary);
  if (!ws) throw IoError("missing checkpoint weights in " + dir.string());
  if (!ws.read(reinterpret_cast<char*>(pv.data()), static_cast<std::streamsize>(pv.size() * sizeof(float))) ||
      !ws.read(reinterpret_cast<char*>(bv.data()), static_cast<std::streamsize>(bv.size() * sizeof(float))))
    throw IoError("truncated checkpoint weights in " + dir.string());
  net.set_flat_parameters(pv);
  net.set_flat_buffers(bv);
  if (meta_out != nullptr) {
    meta_out->spec = spec;
    meta_out->epoch = j.at("epoch").get<int>();
    meta_out->rng_state = j.value("rng_state", std::string{});
    meta_out->extra = j.value("extra", json::object());
  }
  return net;
}

}  // namespace gsed::nets
