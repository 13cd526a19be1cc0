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

#include "relattr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "relattr/text.hpp"

namespace relattr::trainer {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("train: beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("train: beta2 must be in (0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("train: grad_clip must be > 0");
}

AdamState make_adam_state(const std::vector<nd::Tensor2*>& params) {
  AdamState s;
  for (const nd::Tensor2* p : params) {
    s.m.push_back(nd::Matrix::Zero(p->rows(), p->cols()));
    s.v.push_back(nd::Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(const std::vector<nd::Tensor2*>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nd::Tensor2& p = *params[i];
    if (p.grad.rows() != p.rows() || p.grad.cols() != p.cols()) {
      throw std::invalid_argument("adam_step: missing gradient for parameter " + std::to_string(i));
    }
    if (!p.grad.allFinite()) {
      throw DivergenceError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params[i]->value, params[i]->grad, state.m[i], state.v[i], state.t, cfg);
  }
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path,
                       bool include_time) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_acc,seconds\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << text::format_double(e.train_loss) << ',';
    if (e.val_acc) out << text::format_double(*e.val_acc);
    out << ',' << (include_time ? text::format_double(e.seconds) : std::string("0")) << '\n';
  }
}

std::optional<double> example_accuracy(const std::vector<corpus::TrainingExample>& examples,
                                       rtsa2::ModelParams& params,
                                       const rtsa2::ModelConfig& cfg) {
  if (examples.empty()) return std::nullopt;
  const auto scores = rtsa2::predict(examples, params, cfg);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    hit += (scores[i] >= 0.5) == (examples[i].label == 1) ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(examples.size());
}

namespace {

void clip_global_norm(const std::vector<nd::Tensor2*>& params, double max_norm) {
  double sq = 0.0;
  for (const nd::Tensor2* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    for (nd::Tensor2* p : params) p->grad *= max_norm / norm;
  }
}

}  // namespace

TrainResult train(const corpus::CorpusSplit& dataset, const TrainConfig& cfg,
                  rtsa2::ModelConfig model_cfg, const Ablations& ablations,
                  const TrainOptions& options) {
  cfg.validate();
  if (ablations.no_rtsa2) model_cfg.bypass_attention = true;
  if (ablations.no_value_projection) model_cfg.use_value_projection = false;

  std::vector<corpus::TrainingExample> examples;
  for (const auto& ex : dataset.train) {
    if (ablations.no_augment && ex.origin != corpus::Origin::kAnnotated) continue;
    examples.push_back(ex);
  }
  if (examples.empty()) throw std::invalid_argument("train: empty training split");
  const auto d = static_cast<std::size_t>(examples.front().emb_a->values.size());
  if (d != model_cfg.d) {
    throw std::invalid_argument("train: embedding dimension " + std::to_string(d) +
                                " does not match model d " + std::to_string(model_cfg.d));
  }
  for (const auto& ex : examples) {
    if (ex.attribute >= model_cfg.k) throw std::invalid_argument("train: attribute index >= K");
  }
  model_cfg.validate();

  std::mt19937_64 gen(cfg.seed);
  TrainResult result;
  result.model_config = model_cfg;
  rtsa2::ModelParams params = rtsa2::init_params(model_cfg, gen());
  result.params = params;
  if (cfg.epochs == 0) return result;

  const std::vector<nd::Tensor2*> trainable = params.trainable();
  AdamState state = make_adam_state(trainable);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  std::optional<double> best_acc;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), gen);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
        const std::size_t count = std::min(cfg.batch_size, order.size() - first);
        rtsa2::PairBatch batch = rtsa2::make_batch(examples, order, first, count);
        params.zero_grad();
        nd::Tape tape;
        rtsa2::ForwardVars fv =
            rtsa2::forward_batch(tape, batch.emb_a, batch.emb_b, params, model_cfg, true, gen());
        nd::Var loss = rtsa2::masked_bce(fv, batch.attribute, batch.labels);
        tape.backward(loss);
        if (cfg.grad_clip) clip_global_norm(trainable, *cfg.grad_clip);
        adam_step(trainable, state, cfg);
        ++step;
        loss_sum += loss.scalar();
        ++batches;
        if (options.on_step) {
          StepInfo info;
          info.epoch = epoch;
          info.step = step;
          info.loss = loss.scalar();
          if (!model_cfg.bypass_attention) {
            info.gamma_min = fv.gamma.value().minCoeff();
            info.gamma_max = fv.gamma.value().maxCoeff();
          }
          for (std::size_t h = 0; h < params.heads.size(); ++h) {
            info.lambdas.push_back(params.lambda(h));
          }
          options.on_step(info);
        }
      }
    } catch (const nd::NumericError& e) {
      result.diverged = true;
      result.diagnostic = std::string("divergence in epoch ") + std::to_string(epoch) + ": " + e.what();
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.diagnostic = std::string("divergence in epoch ") + std::to_string(epoch) + ": " + e.what();
    }
    if (result.diverged) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.val_acc = example_accuracy(dataset.validation, params, model_cfg);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);

    if (!rec.val_acc || !best_acc || *rec.val_acc > *best_acc) {
      if (rec.val_acc) best_acc = rec.val_acc;
      result.params = params;
      result.best_epoch = epoch;
    }
    if (options.checkpoint_dir && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
      rtsa2::save_checkpoint(*options.checkpoint_dir / name.str(), model_cfg, params);
    }
  }
  if (result.diverged && result.best_epoch == 0) {
    // Nothing validated yet; the current parameters are still finite since
    // failed steps never reach the optimizer update.
    result.params = params;
  }
  return result;
}

}  // namespace relattr::trainer
