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

#include "gsed/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gsed/error.hpp"
#include "gsed/metrics.hpp"

namespace gsed::train {

using nlohmann::json;
using nlohmann::ordered_json;
using nets::ModelKind;
using nets::ModelOutputs;
using nets::ModelSpec;
using nets::Network;

namespace {

// Salts for the child streams of one training run.
enum : std::uint64_t { kStudentInit = 1, kTeacherInit = 2, kSampler = 3, kNoise = 4 };

std::vector<double> row_of(const std::vector<float>& v, int b, int C) {
  std::vector<double> out(C);
  for (int c = 0; c < C; ++c) out[c] = v[static_cast<std::size_t>(b) * C + c];
  return out;
}

std::vector<double> to_double(std::span<const int> v) { return {v.begin(), v.end()}; }

void check_outputs(const ModelOutputs& out, const BatchLabels& labels, const char* what) {
  const int B = static_cast<int>(labels.weak_mask.size());
  if (out.batch != B || out.classes != labels.tags.cols)
    throw ValidationError(std::string(what) + " outputs do not line up with the batch");
}

int feature_bins(const TrainData& data) {
  if (!data.weak.empty()) return data.weak.front().features->cols;
  if (!data.unlabeled.empty()) return data.unlabeled.front().features->cols;
  throw ConfigError("no training clips");
}

double resolve_fraction(const TrainConfig& cfg, const TrainData& data) {
  if (cfg.labeled_fraction > 0.0) return cfg.labeled_fraction;
  const double nl = static_cast<double>(data.weak.size());
  const double nu = static_cast<double>(data.unlabeled.size());
  if (nl + nu == 0.0) throw ConfigError("no training clips");
  return nl / (nl + nu);
}

std::vector<nets::ParamRef> concat(std::vector<nets::ParamRef> a, const std::vector<nets::ParamRef>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class EpochTimer {
 public:
  EpochTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void check_finite(const LossBundle& loss, int epoch, int batch) {
  if (!loss.finite())
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch),
                          epoch, batch);
}

void finish_epoch(EpochLog& log, const LossBundle& sum, int batches, const EpochTimer& timer) {
  log.batches = batches;
  log.loss = sum.scaled(batches > 0 ? 1.0 / batches : 0.0);
  log.wall_seconds = timer.seconds();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kGuided: return "guided";
    case TrainMode::kWeakOnlyPT: return "weak_only_pt";
    case TrainMode::kWeakOnlyPS: return "weak_only_ps";
    case TrainMode::kMeanTeacher: return "mean_teacher";
    case TrainMode::kGuidedHomogeneous: return "guided_homogeneous";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::kGuided, TrainMode::kWeakOnlyPT, TrainMode::kWeakOnlyPS,
                 TrainMode::kMeanTeacher, TrainMode::kGuidedHomogeneous})
    if (to_string(m) == s) return m;
  throw UsageError("unknown mode '" + s +
                   "' (expected guided, weak_only_pt, weak_only_ps, mean_teacher, guided_homogeneous)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (start_epoch < 0 || (epochs > 0 && start_epoch >= epochs))
    throw ConfigError("start_epoch must satisfy 0 <= s < epochs");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta < 1.0))
    throw ConfigError("thresholds alpha and beta must lie in (0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (labeled_fraction > 1.0) throw ConfigError("labeled_fraction must be <= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (holdout_weak < 0) throw ConfigError("holdout_weak must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
  if (consistency_rampup < 1) throw ConfigError("consistency_rampup must be >= 1");
  if (!(mt_input_noise >= 0.0)) throw ConfigError("mt_input_noise must be >= 0");
}

bool TrainConfig::uses_unlabeled() const {
  return mode != TrainMode::kWeakOnlyPT && mode != TrainMode::kWeakOnlyPS;
}

LossBundle& LossBundle::operator+=(const LossBundle& o) {
  l_lPS += o.l_lPS;
  l_lPT += o.l_lPT;
  l_unsup += o.l_unsup;
  l_unsup_prime += o.l_unsup_prime;
  a += o.a;
  total += o.total;
  return *this;
}

LossBundle LossBundle::scaled(double k) const {
  return {l_lPS * k, l_lPT * k, l_unsup * k, l_unsup_prime * k, a * k, total * k};
}

bool LossBundle::finite() const {
  return std::isfinite(l_lPS) && std::isfinite(l_lPT) && std::isfinite(l_unsup) &&
         std::isfinite(l_unsup_prime) && std::isfinite(a) && std::isfinite(total);
}

ordered_json LossBundle::to_json() const {
  ordered_json j;
  j["l_lPS"] = l_lPS;
  j["l_lPT"] = l_lPT;
  j["l_unsup"] = l_unsup;
  j["l_unsup_prime"] = l_unsup_prime;
  j["a"] = a;
  j["total"] = total;
  return j;
}

ordered_json EpochLog::to_json(bool with_wall_time) const {
  ordered_json j;
  j["epoch"] = epoch;
  j["batches"] = batches;
  j["loss"] = loss.to_json();
  ordered_json f1 = ordered_json::object();
  for (const auto& [role, v] : tagging_f1) f1[role] = v;
  j["holdout_tagging_f1"] = f1;
  if (with_wall_time) j["wall_seconds"] = wall_seconds;
  return j;
}

EpochLog EpochLog::from_json(const json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.batches = j.at("batches").get<int>();
  const auto& l = j.at("loss");
  e.loss = {l.at("l_lPS").get<double>(), l.at("l_lPT").get<double>(), l.at("l_unsup").get<double>(),
            l.at("l_unsup_prime").get<double>(), l.at("a").get<double>(), l.at("total").get<double>()};
  for (const auto& [role, v] : j.at("holdout_tagging_f1").items()) e.tagging_f1.emplace_back(role, v.get<double>());
  e.wall_seconds = j.value("wall_seconds", 0.0);
  return e;
}

// ---------------------------------------------------------------------------
// Loss arithmetic

double binary_cross_entropy(std::span<const double> targets, std::span<const double> probs, double eps) {
  if (targets.size() != probs.size() || targets.empty())
    throw ValidationError("binary_cross_entropy: mismatched or empty inputs");
  double sum = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double p = std::clamp(probs[c], eps, 1.0 - eps);
    sum -= targets[c] * std::log(p) + (1.0 - targets[c]) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(probs.size());
}

void binary_cross_entropy_grad(std::span<const double> targets, std::span<const double> probs,
                               std::span<double> grad, double eps) {
  const double inv_c = 1.0 / static_cast<double>(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double p = probs[c];
    grad[c] = (p < eps || p > 1.0 - eps)
                  ? 0.0
                  : inv_c * (-targets[c] / p + (1.0 - targets[c]) / (1.0 - p));
  }
}

double unsupervised_weight(int epoch, int start_epoch, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (epoch < 1) throw ConfigError("epochs are counted from 1");
  if (epoch <= start_epoch) return 0.0;
  return 1.0 - std::pow(gamma, epoch - start_epoch);
}

double consistency_weight(int epoch, int rampup) {
  if (epoch >= rampup) return 1.0;
  return (1.0 - std::pow(0.9, epoch)) / (1.0 - std::pow(0.9, rampup));
}

BatchLabels labels_of(const corpus::Minibatch& batch) { return {batch.weak_mask, batch.tags}; }

LossBundle compute_guided_losses(const ModelOutputs& ps_out, const ModelOutputs& pt_out,
                                 const BatchLabels& labels, const TrainConfig& cfg, double a,
                                 GuidedGrads* grads) {
  check_outputs(ps_out, labels, "student");
  check_outputs(pt_out, labels, "teacher");
  const int B = static_cast<int>(labels.weak_mask.size());
  const int C = labels.tags.cols;
  LossBundle loss;
  loss.a = a;
  if (grads) {
    grads->d_ps.assign(static_cast<std::size_t>(B) * C, 0.0f);
    grads->d_pt.assign(static_cast<std::size_t>(B) * C, 0.0f);
  }
  const double inv_b = B > 0 ? 1.0 / B : 0.0;
  std::vector<double> g(C);
  auto store = [&](std::vector<float>& dst, int b, double scale) {
    for (int c = 0; c < C; ++c) dst[static_cast<std::size_t>(b) * C + c] = static_cast<float>(scale * g[c]);
  };
  for (int b = 0; b < B; ++b) {
    const auto ps = row_of(ps_out.clip_probs, b, C);
    const auto pt = row_of(pt_out.clip_probs, b, C);
    const std::span<const float> ps_f(ps_out.clip_probs.data() + static_cast<std::size_t>(b) * C, C);
    const std::span<const float> pt_f(pt_out.clip_probs.data() + static_cast<std::size_t>(b) * C, C);
    if (labels.weak_mask[b]) {
      std::vector<double> y(C);
      for (int c = 0; c < C; ++c) y[c] = labels.tags(b, c);
      loss.l_lPS += binary_cross_entropy(y, ps);
      loss.l_lPT += binary_cross_entropy(y, pt);
      if (grads) {
        binary_cross_entropy_grad(y, ps, g);
        store(grads->d_ps, b, inv_b);
        binary_cross_entropy_grad(y, pt, g);
        store(grads->d_pt, b, inv_b);
      }
    } else {
      const auto tag_from_pt = to_double(clip_prediction(pt_f, cfg.alpha));
      loss.l_unsup += binary_cross_entropy(tag_from_pt, ps);
      if (grads) {
        binary_cross_entropy_grad(tag_from_pt, ps, g);
        store(grads->d_ps, b, inv_b);
      }
      if (!cfg.ablate_fine_tune_term) {
        const auto tag_from_ps = to_double(clip_prediction(ps_f, cfg.alpha));
        loss.l_unsup_prime += binary_cross_entropy(tag_from_ps, pt);
        if (grads) {
          binary_cross_entropy_grad(tag_from_ps, pt, g);
          store(grads->d_pt, b, a * inv_b);
        }
      }
    }
  }
  loss.l_lPS *= inv_b;
  loss.l_lPT *= inv_b;
  loss.l_unsup *= inv_b;
  loss.l_unsup_prime *= inv_b;
  loss.total = loss.l_lPS + loss.l_lPT + loss.l_unsup + a * loss.l_unsup_prime;
  return loss;
}

double compute_weak_loss(const ModelOutputs& out, const BatchLabels& labels, std::vector<float>* grad) {
  check_outputs(out, labels, "model");
  const int B = static_cast<int>(labels.weak_mask.size());
  const int C = labels.tags.cols;
  const double inv_b = B > 0 ? 1.0 / B : 0.0;
  if (grad) grad->assign(static_cast<std::size_t>(B) * C, 0.0f);
  double sum = 0.0;
  std::vector<double> y(C), g(C);
  for (int b = 0; b < B; ++b) {
    if (!labels.weak_mask[b]) continue;
    const auto p = row_of(out.clip_probs, b, C);
    for (int c = 0; c < C; ++c) y[c] = labels.tags(b, c);
    sum += binary_cross_entropy(y, p);
    if (grad) {
      binary_cross_entropy_grad(y, p, g);
      for (int c = 0; c < C; ++c) (*grad)[static_cast<std::size_t>(b) * C + c] = static_cast<float>(inv_b * g[c]);
    }
  }
  return sum * inv_b;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<nets::ParamRef> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value.size(), 0.0f);
    v_.emplace_back(p.value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(beta1_, static_cast<double>(t_))));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_))));
  const float lr = static_cast<float>(lr_), eps = static_cast<float>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    float* m = m_[k].data();
    float* v = v_[k].data();
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const float g = p.grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      p.value[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Data, specs, inference

TrainData make_train_data(std::vector<corpus::LabeledClip> weak, std::vector<corpus::UnlabeledClip> unlabeled,
                          int holdout, int n_classes) {
  if (holdout < 0) throw ConfigError("holdout must be >= 0");
  if (holdout > static_cast<int>(weak.size()))
    throw ConfigError("holdout of " + std::to_string(holdout) + " exceeds the " +
                      std::to_string(weak.size()) + " weak clips");
  TrainData d;
  d.n_classes = n_classes;
  d.holdout.assign(weak.end() - holdout, weak.end());
  weak.resize(weak.size() - holdout);
  d.weak = std::move(weak);
  d.unlabeled = std::move(unlabeled);
  return d;
}

std::pair<std::string, std::optional<std::string>> role_names(TrainMode mode) {
  switch (mode) {
    case TrainMode::kGuided: return {"ps", "pt"};
    case TrainMode::kGuidedHomogeneous: return {"ps", "teacher"};
    case TrainMode::kWeakOnlyPT: return {"pt", std::nullopt};
    case TrainMode::kWeakOnlyPS: return {"ps", std::nullopt};
    case TrainMode::kMeanTeacher: return {"student", "teacher"};
  }
  return {"ps", std::nullopt};
}

std::string sed_role(TrainMode mode) {
  return mode == TrainMode::kMeanTeacher ? "teacher" : role_names(mode).first;
}

ModelSpec student_spec(const TrainConfig& cfg, int n_classes, int n_features) {
  if (cfg.mode == TrainMode::kWeakOnlyPT) return ModelSpec::default_pt(n_classes, n_features);
  auto s = ModelSpec::default_ps(n_classes, n_features);
  if (cfg.mode == TrainMode::kMeanTeacher) s.input_noise_std = cfg.mt_input_noise;
  return s;
}

std::optional<ModelSpec> teacher_spec(const TrainConfig& cfg, int n_classes, int n_features) {
  switch (cfg.mode) {
    case TrainMode::kGuided: return ModelSpec::default_pt(n_classes, n_features);
    case TrainMode::kGuidedHomogeneous: return ModelSpec::default_ps(n_classes, n_features);
    case TrainMode::kMeanTeacher: return student_spec(cfg, n_classes, n_features);
    default: return std::nullopt;
  }
}

ModelOutputs run_inference(Network& net, const std::vector<const MatrixF*>& clips, int chunk) {
  ModelOutputs all;
  all.classes = net.spec().n_classes;
  for (std::size_t start = 0; start < clips.size(); start += chunk) {
    const std::size_t end = std::min(clips.size(), start + static_cast<std::size_t>(chunk));
    const std::vector<const MatrixF*> part(clips.begin() + start, clips.begin() + end);
    const auto out = net.forward(corpus::stack_features(part), false);
    all.frames = out.frames;
    all.batch += out.batch;
    all.frame_probs.insert(all.frame_probs.end(), out.frame_probs.begin(), out.frame_probs.end());
    all.clip_probs.insert(all.clip_probs.end(), out.clip_probs.begin(), out.clip_probs.end());
  }
  return all;
}

double tagging_f1(Network& net, const std::vector<corpus::LabeledClip>& clips, double alpha) {
  std::vector<const MatrixF*> feats;
  for (const auto& c : clips) feats.push_back(c.features);
  const auto out = run_inference(net, feats);
  const int N = static_cast<int>(clips.size()), C = out.classes;
  BinaryMatrix ref(N, C), pred(N, C);
  for (int n = 0; n < N; ++n) {
    const auto p = clip_prediction(std::span<const float>(out.clip_probs.data() + static_cast<std::size_t>(n) * C, C), alpha);
    for (int c = 0; c < C; ++c) {
      ref(n, c) = clips[n].tags[c];
      pred(n, c) = p[c];
    }
  }
  return metrics::tagging_macro_f1(ref, pred);
}

// ---------------------------------------------------------------------------
// Training loops

TrainResult train_guided(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks,
                         std::optional<ModelSpec> ps_spec, std::optional<ModelSpec> pt_spec) {
  cfg.validate();
  if (cfg.mode != TrainMode::kGuided && cfg.mode != TrainMode::kGuidedHomogeneous)
    throw ConfigError("train_guided needs mode guided or guided_homogeneous");
  const int C = data.n_classes, F = feature_bins(data);
  TrainResult res;
  res.student.emplace(ps_spec.value_or(student_spec(cfg, C, F)), child_seed(cfg.seed, kStudentInit));
  res.teacher.emplace(pt_spec.value_or(*teacher_spec(cfg, C, F)), child_seed(cfg.seed, kTeacherInit));
  if (cfg.epochs == 0) return res;
  Network& ps = *res.student;
  Network& pt = *res.teacher;
  const auto [ps_role, pt_role] = role_names(cfg.mode);

  corpus::MinibatchSampler sampler(&data.weak, &data.unlabeled, cfg.batch_size, resolve_fraction(cfg, data), C,
                                   child_seed(cfg.seed, kSampler));
  Rng noise(child_seed(cfg.seed, kNoise));
  Adam opt(concat(ps.parameters(), pt.parameters()), cfg.learning_rate);

  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochTimer timer;
    const double a = unsupervised_weight(e, cfg.start_epoch, cfg.gamma);
    sampler.start_epoch();
    LossBundle sum;
    for (int k = 0; k < sampler.batches_per_epoch(); ++k) {
      const auto mb = sampler.next();
      const auto labels = labels_of(mb);
      ps.zero_grad();
      pt.zero_grad();
      const auto ps_out = ps.forward(mb.inputs, true, &noise);
      const auto pt_out = pt.forward(mb.inputs, true, &noise);
      GuidedGrads g;
      const auto loss = compute_guided_losses(ps_out, pt_out, labels, cfg, a, &g);
      check_finite(loss, e, k + 1);
      ps.backward(g.d_ps);
      pt.backward(g.d_pt);
      opt.step();
      sum += loss;
    }
    EpochLog log;
    log.epoch = e;
    if (!data.holdout.empty()) {
      log.tagging_f1.emplace_back(ps_role, tagging_f1(ps, data.holdout, cfg.alpha));
      log.tagging_f1.emplace_back(*pt_role, tagging_f1(pt, data.holdout, cfg.alpha));
    }
    finish_epoch(log, sum, sampler.batches_per_epoch(), timer);
    log.rng_state = noise.serialize();
    res.log.push_back(log);
    if (hooks.on_epoch_end) hooks.on_epoch_end(log, ps, &pt);
  }
  return res;
}

TrainResult train_weak_only(ModelKind kind, const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks,
                            std::optional<ModelSpec> spec) {
  cfg.validate();
  const int C = data.n_classes, F = feature_bins(data);
  TrainConfig local = cfg;
  local.mode = kind == ModelKind::kPT ? TrainMode::kWeakOnlyPT : TrainMode::kWeakOnlyPS;
  TrainResult res;
  res.student.emplace(spec.value_or(student_spec(local, C, F)), child_seed(cfg.seed, kStudentInit));
  if (cfg.epochs == 0) return res;
  Network& net = *res.student;
  const std::string role = role_names(local.mode).first;

  const int batch = std::min(cfg.batch_size, static_cast<int>(data.weak.size()));
  corpus::MinibatchSampler sampler(&data.weak, nullptr, batch, 1.0, C, child_seed(cfg.seed, kSampler));
  Rng noise(child_seed(cfg.seed, kNoise));
  Adam opt(net.parameters(), cfg.learning_rate);

  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochTimer timer;
    sampler.start_epoch();
    LossBundle sum;
    for (int k = 0; k < sampler.batches_per_epoch(); ++k) {
      const auto mb = sampler.next();
      net.zero_grad();
      const auto out = net.forward(mb.inputs, true, &noise);
      std::vector<float> grad;
      LossBundle loss;
      const double l = compute_weak_loss(out, labels_of(mb), &grad);
      (kind == ModelKind::kPT ? loss.l_lPT : loss.l_lPS) = l;
      loss.total = l;
      check_finite(loss, e, k + 1);
      net.backward(grad);
      opt.step();
      sum += loss;
    }
    EpochLog log;
    log.epoch = e;
    if (!data.holdout.empty()) log.tagging_f1.emplace_back(role, tagging_f1(net, data.holdout, cfg.alpha));
    finish_epoch(log, sum, sampler.batches_per_epoch(), timer);
    log.rng_state = noise.serialize();
    res.log.push_back(log);
    if (hooks.on_epoch_end) hooks.on_epoch_end(log, net, nullptr);
  }
  return res;
}

TrainResult train_mean_teacher(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks,
                               std::optional<ModelSpec> spec) {
  cfg.validate();
  if (cfg.mode != TrainMode::kMeanTeacher) throw ConfigError("train_mean_teacher needs mode mean_teacher");
  const int C = data.n_classes, F = feature_bins(data);
  TrainResult res;
  res.student.emplace(spec.value_or(student_spec(cfg, C, F)), child_seed(cfg.seed, kStudentInit));
  res.teacher.emplace(*res.student);
  if (cfg.epochs == 0) return res;
  Network& student = *res.student;
  Network& teacher = *res.teacher;

  corpus::MinibatchSampler sampler(&data.weak, &data.unlabeled, cfg.batch_size, resolve_fraction(cfg, data), C,
                                   child_seed(cfg.seed, kSampler));
  Rng noise(child_seed(cfg.seed, kNoise));
  Adam opt(student.parameters(), cfg.learning_rate);
  const float d = static_cast<float>(cfg.ema_decay);

  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochTimer timer;
    const double w = consistency_weight(e, cfg.consistency_rampup);
    sampler.start_epoch();
    LossBundle sum;
    for (int k = 0; k < sampler.batches_per_epoch(); ++k) {
      const auto mb = sampler.next();
      const auto labels = labels_of(mb);
      student.zero_grad();
      const auto s_out = student.forward(mb.inputs, true, &noise);
      // The teacher's running statistics are a moving average of the
      // student's, so its own forward pass must not touch them.
      const auto saved = teacher.flat_buffers();
      const auto t_out = teacher.forward(mb.inputs, true, &noise);
      teacher.set_flat_buffers(saved);

      std::vector<float> grad;
      LossBundle loss;
      loss.l_lPS = compute_weak_loss(s_out, labels, &grad);
      const int B = s_out.batch;
      double cons = 0.0;
      for (std::size_t i = 0; i < s_out.clip_probs.size(); ++i) {
        const double diff = static_cast<double>(s_out.clip_probs[i]) - t_out.clip_probs[i];
        cons += diff * diff;
        grad[i] += static_cast<float>(w * 2.0 * diff / (static_cast<double>(C) * B));
      }
      loss.l_unsup_prime = cons / (static_cast<double>(C) * B);
      loss.a = w;
      loss.total = loss.l_lPS + w * loss.l_unsup_prime;
      check_finite(loss, e, k + 1);
      student.backward(grad);
      opt.step();

      auto tp = teacher.parameters();
      auto sp = student.parameters();
      for (std::size_t p = 0; p < tp.size(); ++p)
        for (std::size_t i = 0; i < tp[p].value.size(); ++i)
          tp[p].value[i] = d * tp[p].value[i] + (1.0f - d) * sp[p].value[i];
      auto tb = teacher.buffers();
      auto sb = student.buffers();
      for (std::size_t p = 0; p < tb.size(); ++p)
        for (std::size_t i = 0; i < tb[p].size(); ++i) tb[p][i] = d * tb[p][i] + (1.0f - d) * sb[p][i];
      sum += loss;
    }
    EpochLog log;
    log.epoch = e;
    if (!data.holdout.empty()) {
      log.tagging_f1.emplace_back("student", tagging_f1(student, data.holdout, cfg.alpha));
      log.tagging_f1.emplace_back("teacher", tagging_f1(teacher, data.holdout, cfg.alpha));
    }
    finish_epoch(log, sum, sampler.batches_per_epoch(), timer);
    log.rng_state = noise.serialize();
    res.log.push_back(log);
    if (hooks.on_epoch_end) hooks.on_epoch_end(log, student, &teacher);
  }
  return res;
}

TrainResult train(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  switch (cfg.mode) {
    case TrainMode::kGuided:
    case TrainMode::kGuidedHomogeneous: return train_guided(data, cfg, hooks);
    case TrainMode::kWeakOnlyPT: return train_weak_only(ModelKind::kPT, data, cfg, hooks);
    case TrainMode::kWeakOnlyPS: return train_weak_only(ModelKind::kPS, data, cfg, hooks);
    case TrainMode::kMeanTeacher: return train_mean_teacher(data, cfg, hooks);
  }
  throw ConfigError("unknown training mode");
}

}  // namespace gsed::train
