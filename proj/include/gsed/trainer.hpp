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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsed/corpus.hpp"
#include "gsed/nets.hpp"
#include "gsed/postprocess.hpp"
#include "json.hpp"

namespace gsed::train {

using postprocess::clip_prediction;
using postprocess::frame_prediction;

enum class TrainMode { kGuided, kWeakOnlyPT, kWeakOnlyPS, kMeanTeacher, kGuidedHomogeneous };

std::string to_string(TrainMode m);
// Throws UsageError for unknown names.
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kGuided;
  double gamma = 0.999;
  int start_epoch = 5;
  double alpha = 0.5;
  double beta = 0.5;
  int epochs = 100;
  int batch_size = 64;
  double labeled_fraction = 0.0;  // <= 0: n_weak / (n_weak + n_unlabeled)
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int holdout_weak = 50;  // weak clips kept out of training for the epoch log
  double ema_decay = 0.999;
  int consistency_rampup = 30;
  double mt_input_noise = 0.15;
  // Drops the student-to-teacher term from the code path entirely instead of
  // weighting it by a. Used to check that gamma = 1 is equivalent.
  bool ablate_fine_tune_term = false;

  void validate() const;
  bool uses_unlabeled() const;
};

struct LossBundle {
  double l_lPS = 0.0;
  double l_lPT = 0.0;
  double l_unsup = 0.0;
  double l_unsup_prime = 0.0;
  double a = 0.0;
  double total = 0.0;

  LossBundle& operator+=(const LossBundle& o);
  LossBundle scaled(double k) const;
  bool finite() const;
  nlohmann::ordered_json to_json() const;
};

struct EpochLog {
  int epoch = 0;
  LossBundle loss;  // mean over the epoch's batches
  int batches = 0;
  // Holdout tagging F1 per network role ("ps", "pt", "teacher", ...).
  std::vector<std::pair<std::string, double>> tagging_f1;
  double wall_seconds = 0.0;
  // State of the training noise stream after the epoch; stored in
  // checkpoints, not in the JSON log.
  std::string rng_state;

  nlohmann::ordered_json to_json(bool with_wall_time = true) const;
  static EpochLog from_json(const nlohmann::json& j);
};

// Mean over classes of -[t log p + (1 - t) log(1 - p)], p clipped to
// [eps, 1 - eps].
double binary_cross_entropy(std::span<const double> targets, std::span<const double> probs,
                            double eps = 1e-7);
// d/dp of binary_cross_entropy; zero where the clip is active.
void binary_cross_entropy_grad(std::span<const double> targets, std::span<const double> probs,
                               std::span<double> grad, double eps = 1e-7);

// 0 for e <= s, 1 - gamma^(e - s) afterwards.
double unsupervised_weight(int epoch, int start_epoch, double gamma);

// Batch membership and weak tags for the loss: B entries, tags B x C.
struct BatchLabels {
  std::vector<std::uint8_t> weak_mask;
  MatrixF tags;
};
BatchLabels labels_of(const corpus::Minibatch& batch);

struct GuidedGrads {
  std::vector<float> d_ps;  // B x C, d(total)/d(student clip probs)
  std::vector<float> d_pt;  // B x C, d(total)/d(teacher clip probs)
};

// The four sums of one guided step, each divided by the full batch size.
// Pseudo-tags are hard thresholds of the other model's clip probabilities
// and receive no gradient.
LossBundle compute_guided_losses(const nets::ModelOutputs& ps_out, const nets::ModelOutputs& pt_out,
                                 const BatchLabels& labels, const TrainConfig& cfg, double a,
                                 GuidedGrads* grads = nullptr);

// Supervised loss of one model on the labeled members (divided by B).
double compute_weak_loss(const nets::ModelOutputs& out, const BatchLabels& labels,
                         std::vector<float>* grad = nullptr);

// Adam over a fixed list of parameters; one state per parameter tensor.
class Adam {
 public:
  explicit Adam(std::vector<nets::ParamRef> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();
  long steps() const { return t_; }

 private:
  std::vector<nets::ParamRef> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Training data as seen by the trainer: no label fields on unlabeled clips.
struct TrainData {
  std::vector<corpus::LabeledClip> weak;
  std::vector<corpus::UnlabeledClip> unlabeled;
  std::vector<corpus::LabeledClip> holdout;
  int n_classes = 0;
};

// Splits weak clips into training and holdout: the last `holdout` weak
// clips in manifest order are held out.
TrainData make_train_data(std::vector<corpus::LabeledClip> weak, std::vector<corpus::UnlabeledClip> unlabeled,
                          int holdout, int n_classes);

// Role names of the trained networks: student first, then teacher if any.
// guided: ps, pt; guided_homogeneous: ps, teacher; weak_only_*: pt or ps;
// mean_teacher: student, teacher.
std::pair<std::string, std::optional<std::string>> role_names(TrainMode mode);
// Role whose outputs are decoded into events at evaluation.
std::string sed_role(TrainMode mode);

// Consistency weight of the mean-teacher baseline at epoch e (1-based):
// (1 - 0.9^e) / (1 - 0.9^rampup), capped at 1.
double consistency_weight(int epoch, int rampup);

// Default model specs per mode: student and, where there is one, teacher.
nets::ModelSpec student_spec(const TrainConfig& cfg, int n_classes, int n_features);
std::optional<nets::ModelSpec> teacher_spec(const TrainConfig& cfg, int n_classes, int n_features);

struct TrainResult {
  // Guided modes: student = PS, teacher = PT (or the PS-shaped teacher).
  // Weak-only: student is the trained model, no teacher.
  // Mean teacher: student = PS, teacher = its moving average.
  std::optional<nets::Network> student;
  std::optional<nets::Network> teacher;
  std::vector<EpochLog> log;
};

struct TrainHooks {
  std::function<void(const EpochLog&, nets::Network& student, nets::Network* teacher)>
      on_epoch_end;
};

// Batched inference over clips that share one feature shape.
nets::ModelOutputs run_inference(nets::Network& net, const std::vector<const MatrixF*>& clips,
                                 int chunk = 32);
double tagging_f1(nets::Network& net, const std::vector<corpus::LabeledClip>& clips, double alpha);

TrainResult train_guided(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks = {},
                         std::optional<nets::ModelSpec> ps_spec = {},
                         std::optional<nets::ModelSpec> pt_spec = {});
TrainResult train_weak_only(nets::ModelKind kind, const TrainData& data, const TrainConfig& cfg,
                            const TrainHooks& hooks = {}, std::optional<nets::ModelSpec> spec = {});
TrainResult train_mean_teacher(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks = {},
                               std::optional<nets::ModelSpec> spec = {});
// Dispatch on cfg.mode.
TrainResult train(const TrainData& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace gsed::train
