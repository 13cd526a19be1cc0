// Copyright 2026 The relattr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RELATTR_TRAINER_HPP_
#define RELATTR_TRAINER_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relattr/corpus.hpp"
#include "relattr/nd.hpp"
#include "relattr/rtsa2.hpp"

namespace relattr::trainer {

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::optional<double> grad_clip;  // global L2 norm
  std::size_t checkpoint_every = 0;  // 0 = only the best checkpoint

  void validate() const;
};

struct AdamState {
  std::vector<nd::Matrix> m;
  std::vector<nd::Matrix> v;
  std::uint64_t t = 0;
};

AdamState make_adam_state(const std::vector<nd::Tensor2*>& params);

// Bias-corrected Adam update of one tensor at step t (t >= 1).
template <typename Param, typename Grad, typename Moment>
void adam_update(Eigen::MatrixBase<Param>& param, const Eigen::MatrixBase<Grad>& grad,
                 Eigen::MatrixBase<Moment>& m, Eigen::MatrixBase<Moment>& v, std::uint64_t t,
                 const TrainConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  param.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Applies one Adam step using each tensor's `grad`. Throws DivergenceError
// without touching any parameter when a gradient is non-finite.
void adam_step(const std::vector<nd::Tensor2*>& params, AdamState& state,
               const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_acc;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

// `epoch,train_loss,val_acc,seconds`; an empty val_acc cell when there is
// no validation data. With `include_time` false the seconds column is
// written as 0 (reproducible output).
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path,
                       bool include_time = true);

struct Ablations {
  bool no_augment = false;            // drop mined examples
  bool no_rtsa2 = false;              // plain concatenation predictor
  bool no_value_projection = false;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double gamma_min = 1.0;
  double gamma_max = 1.0;
  std::vector<double> lambdas;
};

struct TrainOptions {
  std::function<void(const StepInfo&)> on_step;
  // When set and TrainConfig::checkpoint_every > 0, periodic checkpoints
  // are written here as epoch_NNN.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
};

struct TrainResult {
  rtsa2::ModelConfig model_config;
  rtsa2::ModelParams params;  // best validation ACC (last epoch if none)
  TrainHistory history;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string diagnostic;
};

// Seeded minibatch training with masked BCE and Adam. The embedding store
// is never written. On a non-finite loss or gradient the run stops and the
// last good parameters are returned with `diverged` set.
TrainResult train(const corpus::CorpusSplit& dataset, const TrainConfig& cfg,
                  rtsa2::ModelConfig model_cfg, const Ablations& ablations,
                  const TrainOptions& options = {});

// Fraction of examples with (p >= 0.5) == (label == 1); nullopt when empty.
std::optional<double> example_accuracy(const std::vector<corpus::TrainingExample>& examples,
                                       rtsa2::ModelParams& params,
                                       const rtsa2::ModelConfig& cfg);

}  // namespace relattr::trainer

#endif  // RELATTR_TRAINER_HPP_
