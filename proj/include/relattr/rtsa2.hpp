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

#ifndef RELATTR_RTSA2_HPP_
#define RELATTR_RTSA2_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "relattr/corpus.hpp"
#include "relattr/nd.hpp"

// Relative timbre shift-aware differential attention comparator.
//
// Given embeddings e_A and e_B, the pair E = [e_A; e_B] runs through
// multi-head differential attention (no positional terms), producing
// attended embeddings. Their difference D is amplified as
// tanh(D) * ||D|| * gamma, with gamma in (0, 2) predicted from the attended
// pair, and a predictor maps [e_A_att; e_B_att; amplified] to K per-attribute
// probabilities that "B is stronger than A". Training supervises only the
// target attribute.
namespace relattr::rtsa2 {

struct ModelConfig {
  std::size_t d = corpus::kDefaultEmbeddingDim;
  std::size_t k = corpus::kDefaultAttributeCount;
  std::size_t n_heads = 4;
  double lambda_init = 0.8;
  std::size_t scale_hidden = 128;
  std::size_t predictor_hidden = 512;
  double dropout_rate = 0.1;
  bool use_value_projection = true;
  // Scale attention logits by 1/sqrt(d) instead of 1/sqrt(head_dim).
  bool full_dim_scaling = false;
  // Ablation: skip attention and amplification, predict from [e_A; e_B].
  bool bypass_attention = false;

  std::size_t head_dim() const { return d / n_heads; }
  // Throws std::invalid_argument on violated invariants.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HeadParams {
  nd::Tensor2 w_q;         // d x 2*head_dim, columns [Q1 | Q2]
  nd::Tensor2 w_k;         // d x 2*head_dim, columns [K1 | K2]
  nd::Tensor2 w_v;         // d x head_dim (value projection only)
  nd::Tensor2 lambda_raw;  // 1 x 1, lambda = logistic(lambda_raw)
};

struct ModelParams {
  std::vector<HeadParams> heads;
  nd::Tensor2 w_o;  // d x d output projection (value projection only)
  nd::Tensor2 scale_w1, scale_b1, scale_w2, scale_b2;
  nd::Tensor2 fc_w, fc_b;
  nd::Tensor2 bn_gain, bn_shift;
  nd::BatchNormStats bn_stats;
  nd::Tensor2 w_out;  // predictor_hidden x K

  // Trainable tensors in a fixed canonical order with stable names.
  std::vector<std::pair<std::string, nd::Tensor2*>> named();
  std::vector<nd::Tensor2*> trainable();
  double lambda(std::size_t head) const;
  void zero_grad();
};

// Glorot-uniform weights, zero biases, unit BN gain, and
// lambda_raw = logit(lambda_init). Deterministic given the seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Handles to the per-head intermediate values of one forward pass. All
// matrices have one row per pair in the batch.
struct HeadVars {
  nd::Var s1_a, s1_b;      // softmax(Q1 K1^T / sqrt(.)) rows of A and B (N x 2)
  nd::Var s2_a, s2_b;      // softmax(Q2 K2^T / sqrt(.)) rows
  nd::Var lambda;          // 1 x 1
  nd::Var diff_a, diff_b;  // s1 - lambda * s2 (N x 2)
  nd::Var out_a, out_b;    // attended values (N x head_dim)
};

struct ForwardVars {
  std::vector<HeadVars> heads;
  nd::Var e_a_att, e_b_att;  // N x d
  nd::Var gamma;             // N x 1
  nd::Var delta;             // N x d
  nd::Var delta_hat;         // N x d
  nd::Var logits;            // N x K
  nd::Var probs;             // N x K
};

HeadVars diff_attention(const nd::Var& e_a, const nd::Var& e_b, ModelParams& params,
                        const ModelConfig& cfg, std::size_t head);
// Single-pair form: E is 2 x d ([e_A; e_B]); returns the 2 x head_dim head
// output. Throws nd::ShapeError unless E has exactly two rows.
nd::Matrix diff_attention(const nd::Matrix& pair, ModelParams& params, const ModelConfig& cfg,
                          std::size_t head);

// gamma = 2 * logistic(f_scale([e_A_att; e_B_att])), N x 1.
nd::Var gamma_scale(const nd::Var& e_a_att, const nd::Var& e_b_att, ModelParams& params);
// tanh(D) * ||D||_2 * gamma, D = e_B_att - e_A_att, row by row.
nd::Var amplify_delta(const nd::Var& e_a_att, const nd::Var& e_b_att, const nd::Var& gamma);

ForwardVars forward_batch(nd::Tape& tape, const nd::Matrix& emb_a, const nd::Matrix& emb_b,
                          ModelParams& params, const ModelConfig& cfg, bool train_mode,
                          std::uint64_t dropout_seed = 0);

// Mean over the batch of BCE on probs(i, attribute[i]) against labels(i).
nd::Var masked_bce(const ForwardVars& fwd, const std::vector<Eigen::Index>& attribute,
                   const nd::Matrix& labels);

struct ForwardTrace {
  Eigen::VectorXd e_a_att;
  Eigen::VectorXd e_b_att;
  Eigen::VectorXd delta_hat;
  double gamma = 1.0;
  std::vector<Eigen::Matrix2d> attn_maps;  // per head, rows A and B
  std::vector<double> lambdas;
  Eigen::VectorXd probs;
};

ForwardTrace forward(const corpus::EmbeddingVector& emb_a, const corpus::EmbeddingVector& emb_b,
                     ModelParams& params, const ModelConfig& cfg, bool train_mode,
                     std::uint64_t dropout_seed = 0);

// -[y log o_k + (1 - y) log(1 - o_k)] with clamped logs.
double masked_bce(const ForwardTrace& trace, std::size_t attribute, int label);

// Stacks pair embeddings of `examples[first, first+count)` into N x d blocks.
struct PairBatch {
  nd::Matrix emb_a;
  nd::Matrix emb_b;
  std::vector<Eigen::Index> attribute;
  nd::Matrix labels;  // N x 1
};
PairBatch make_batch(const std::vector<corpus::TrainingExample>& examples,
                     const std::vector<std::size_t>& order, std::size_t first, std::size_t count);

// Eval-mode probability of the target attribute for every example.
std::vector<double> predict(const std::vector<corpus::TrainingExample>& examples,
                            ModelParams& params, const ModelConfig& cfg,
                            std::size_t batch_size = 512);

struct GradCheckOptions {
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  // Train mode exercises batch statistics and a fixed dropout mask.
  bool train_mode = false;
  // cbrt(machine epsilon): balances central-difference truncation against
  // cancellation roundoff in double precision.
  double eps = 6.0555e-6;
};

// Central-difference check of masked BCE w.r.t. every trainable tensor on
// random embeddings, labels, target attributes, and BN running statistics.
nd::GradCheckResult check_model_gradients(const ModelConfig& cfg, const GradCheckOptions& opt);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Versioned binary container: magic, version, ModelConfig as key=value
// text, named float64 parameter blocks (including BN running statistics),
// and a trailing CRC-32 of everything before it.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace relattr::rtsa2

#endif  // RELATTR_RTSA2_HPP_
