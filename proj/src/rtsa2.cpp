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

#include "relattr/rtsa2.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace relattr::rtsa2 {

using nd::Matrix;
using nd::Tape;
using nd::Tensor2;
using nd::Var;

void ModelConfig::validate() const {
  if (d == 0 || k == 0) throw std::invalid_argument("model: d and k must be positive");
  if (n_heads == 0 || d % n_heads != 0) {
    throw std::invalid_argument("model: n_heads must divide d");
  }
  if (!(lambda_init > 0.0 && lambda_init < 1.0)) {
    throw std::invalid_argument("model: lambda_init must be in (0,1)");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("model: dropout_rate must be in [0,1)");
  }
  if (scale_hidden == 0 || predictor_hidden == 0) {
    throw std::invalid_argument("model: hidden widths must be positive");
  }
}

std::vector<std::pair<std::string, Tensor2*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor2*>> out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string p = "head" + std::to_string(h) + ".";
    out.emplace_back(p + "w_q", &heads[h].w_q);
    out.emplace_back(p + "w_k", &heads[h].w_k);
    if (heads[h].w_v.value.size() != 0) out.emplace_back(p + "w_v", &heads[h].w_v);
    out.emplace_back(p + "lambda_raw", &heads[h].lambda_raw);
  }
  if (w_o.value.size() != 0) out.emplace_back("attn.w_o", &w_o);
  if (scale_w1.value.size() != 0) {
    out.emplace_back("scale.w1", &scale_w1);
    out.emplace_back("scale.b1", &scale_b1);
    out.emplace_back("scale.w2", &scale_w2);
    out.emplace_back("scale.b2", &scale_b2);
  }
  out.emplace_back("pred.fc_w", &fc_w);
  out.emplace_back("pred.fc_b", &fc_b);
  out.emplace_back("pred.bn_gain", &bn_gain);
  out.emplace_back("pred.bn_shift", &bn_shift);
  out.emplace_back("pred.w_out", &w_out);
  return out;
}

std::vector<Tensor2*> ModelParams::trainable() {
  std::vector<Tensor2*> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

double ModelParams::lambda(std::size_t head) const {
  return nd::logistic(heads.at(head).lambda_raw.value(0, 0));
}

void ModelParams::zero_grad() {
  for (Tensor2* t : trainable()) t->zero_grad();
}

namespace {

Tensor2 glorot(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& gen) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  return Tensor2(std::move(m), true);
}

Tensor2 zeros(Eigen::Index r, Eigen::Index c) { return Tensor2(Matrix::Zero(r, c), true); }

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 gen(seed);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
  const auto sh = static_cast<Eigen::Index>(cfg.scale_hidden);
  const auto ph = static_cast<Eigen::Index>(cfg.predictor_hidden);
  const auto k = static_cast<Eigen::Index>(cfg.k);

  ModelParams p;
  if (!cfg.bypass_attention) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      HeadParams head;
      head.w_q = glorot(d, 2 * hd, gen);
      head.w_k = glorot(d, 2 * hd, gen);
      if (cfg.use_value_projection) head.w_v = glorot(d, hd, gen);
      head.lambda_raw = Tensor2(Matrix::Constant(1, 1, nd::logit(cfg.lambda_init)), true);
      p.heads.push_back(std::move(head));
    }
    if (cfg.use_value_projection) p.w_o = glorot(d, d, gen);
    p.scale_w1 = glorot(2 * d, sh, gen);
    p.scale_b1 = zeros(1, sh);
    p.scale_w2 = glorot(sh, 1, gen);
    p.scale_b2 = zeros(1, 1);
  }
  const Eigen::Index z_width = cfg.bypass_attention ? 2 * d : 3 * d;
  p.fc_w = glorot(z_width, ph, gen);
  p.fc_b = zeros(1, ph);
  p.bn_gain = Tensor2(Matrix::Ones(1, ph), true);
  p.bn_shift = zeros(1, ph);
  p.bn_stats = nd::BatchNormStats(ph);
  p.w_out = glorot(ph, k, gen);
  return p;
}

HeadVars diff_attention(const Var& e_a, const Var& e_b, ModelParams& params,
                        const ModelConfig& cfg, std::size_t head) {
  if (head >= params.heads.size()) throw std::out_of_range("diff_attention: head index");
  Tape& tape = *e_a.tape();
  HeadParams& hp = params.heads[head];
  const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
  const double inv_scale =
      1.0 / std::sqrt(static_cast<double>(cfg.full_dim_scaling ? cfg.d : cfg.head_dim()));

  Var wq = tape.leaf(hp.w_q);
  Var wk = tape.leaf(hp.w_k);
  Var qa = nd::matmul(e_a, wq), qb = nd::matmul(e_b, wq);
  Var ka = nd::matmul(e_a, wk), kb = nd::matmul(e_b, wk);

  // One softmax row per query token over the keys (A, B).
  auto attention_rows = [&](Eigen::Index offset, Var* row_a, Var* row_b) {
    Var q1a = nd::slice_cols(qa, offset, hd), q1b = nd::slice_cols(qb, offset, hd);
    Var k1a = nd::slice_cols(ka, offset, hd), k1b = nd::slice_cols(kb, offset, hd);
    Var la = nd::concat_cols({nd::row_dot(q1a, k1a), nd::row_dot(q1a, k1b)});
    Var lb = nd::concat_cols({nd::row_dot(q1b, k1a), nd::row_dot(q1b, k1b)});
    *row_a = nd::row_softmax(nd::scale(la, inv_scale));
    *row_b = nd::row_softmax(nd::scale(lb, inv_scale));
  };

  HeadVars hv;
  attention_rows(0, &hv.s1_a, &hv.s1_b);
  attention_rows(hd, &hv.s2_a, &hv.s2_b);
  hv.lambda = nd::sigmoid(tape.leaf(hp.lambda_raw));
  hv.diff_a = nd::sub(hv.s1_a, nd::scale_by(hv.s2_a, hv.lambda));
  hv.diff_b = nd::sub(hv.s1_b, nd::scale_by(hv.s2_b, hv.lambda));

  Var va, vb;
  if (cfg.use_value_projection) {
    Var wv = tape.leaf(hp.w_v);
    va = nd::matmul(e_a, wv);
    vb = nd::matmul(e_b, wv);
  } else {
    const auto start = static_cast<Eigen::Index>(head) * hd;
    va = nd::slice_cols(e_a, start, hd);
    vb = nd::slice_cols(e_b, start, hd);
  }
  auto apply = [&](const Var& weights) {
    return nd::add(nd::mul_col(nd::slice_cols(weights, 0, 1), va),
                   nd::mul_col(nd::slice_cols(weights, 1, 1), vb));
  };
  hv.out_a = apply(hv.diff_a);
  hv.out_b = apply(hv.diff_b);
  return hv;
}

Matrix diff_attention(const Matrix& pair, ModelParams& params, const ModelConfig& cfg,
                      std::size_t head) {
  if (pair.rows() != 2) {
    throw nd::ShapeError("diff_attention: the sequence must hold exactly 2 embeddings");
  }
  Tape tape;
  Var a = tape.constant(pair.topRows(1));
  Var b = tape.constant(pair.bottomRows(1));
  HeadVars hv = diff_attention(a, b, params, cfg, head);
  Matrix out(2, hv.out_a.cols());
  out.row(0) = hv.out_a.value().row(0);
  out.row(1) = hv.out_b.value().row(0);
  return out;
}

Var gamma_scale(const Var& e_a_att, const Var& e_b_att, ModelParams& params) {
  Tape& tape = *e_a_att.tape();
  Var pair = nd::concat_cols({e_a_att, e_b_att});
  Var hidden = nd::tanh(nd::affine(pair, tape.leaf(params.scale_w1), tape.leaf(params.scale_b1)));
  Var raw = nd::affine(hidden, tape.leaf(params.scale_w2), tape.leaf(params.scale_b2));
  return nd::scale(nd::sigmoid(raw), 2.0);
}

Var amplify_delta(const Var& e_a_att, const Var& e_b_att, const Var& gamma) {
  Var delta = nd::sub(e_b_att, e_a_att);
  Var factor = nd::mul(nd::l2_norm(delta), gamma);
  return nd::mul_col(factor, nd::tanh(delta));
}

ForwardVars forward_batch(Tape& tape, const Matrix& emb_a, const Matrix& emb_b,
                          ModelParams& params, const ModelConfig& cfg, bool train_mode,
                          std::uint64_t dropout_seed) {
  const auto d = static_cast<Eigen::Index>(cfg.d);
  if (emb_a.cols() != d || emb_b.cols() != d || emb_a.rows() != emb_b.rows()) {
    throw nd::ShapeError("forward: embedding dimension does not match the model");
  }
  ForwardVars fv;
  Var ea = tape.constant(emb_a);
  Var eb = tape.constant(emb_b);

  Var z;
  if (cfg.bypass_attention) {
    fv.e_a_att = ea;
    fv.e_b_att = eb;
    z = nd::concat_cols({ea, eb});
  } else {
    std::vector<Var> outs_a, outs_b;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      fv.heads.push_back(diff_attention(ea, eb, params, cfg, h));
      outs_a.push_back(fv.heads.back().out_a);
      outs_b.push_back(fv.heads.back().out_b);
    }
    Var att_a = nd::concat_cols(outs_a);
    Var att_b = nd::concat_cols(outs_b);
    if (cfg.use_value_projection) {
      Var wo = tape.leaf(params.w_o);
      att_a = nd::matmul(att_a, wo);
      att_b = nd::matmul(att_b, wo);
    }
    fv.e_a_att = att_a;
    fv.e_b_att = att_b;
    fv.gamma = gamma_scale(att_a, att_b, params);
    fv.delta = nd::sub(att_b, att_a);
    fv.delta_hat = amplify_delta(att_a, att_b, fv.gamma);
    z = nd::concat_cols({att_a, att_b, fv.delta_hat});
  }

  Var hidden = nd::affine(z, tape.leaf(params.fc_w), tape.leaf(params.fc_b));
  hidden = nd::batch_stat_norm(hidden, tape.leaf(params.bn_gain), tape.leaf(params.bn_shift),
                               params.bn_stats, train_mode);
  hidden = nd::tanh(hidden);
  hidden = nd::dropout(hidden, cfg.dropout_rate, dropout_seed, train_mode);
  fv.logits = nd::matmul(hidden, tape.leaf(params.w_out));
  fv.probs = nd::sigmoid(fv.logits);
  return fv;
}

Var masked_bce(const ForwardVars& fwd, const std::vector<Eigen::Index>& attribute,
               const Matrix& labels) {
  return nd::bce(nd::gather_cols(fwd.probs, attribute), labels);
}

ForwardTrace forward(const corpus::EmbeddingVector& emb_a, const corpus::EmbeddingVector& emb_b,
                     ModelParams& params, const ModelConfig& cfg, bool train_mode,
                     std::uint64_t dropout_seed) {
  Tape tape;
  const Matrix a = emb_a.values.transpose();
  const Matrix b = emb_b.values.transpose();
  ForwardVars fv = forward_batch(tape, a, b, params, cfg, train_mode, dropout_seed);
  ForwardTrace tr;
  tr.e_a_att = fv.e_a_att.value().row(0).transpose();
  tr.e_b_att = fv.e_b_att.value().row(0).transpose();
  if (cfg.bypass_attention) {
    tr.delta_hat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.d));
    tr.gamma = 1.0;
  } else {
    tr.delta_hat = fv.delta_hat.value().row(0).transpose();
    tr.gamma = fv.gamma.value()(0, 0);
  }
  for (const HeadVars& hv : fv.heads) {
    Eigen::Matrix2d m;
    m.row(0) = hv.diff_a.value().row(0);
    m.row(1) = hv.diff_b.value().row(0);
    tr.attn_maps.push_back(m);
    tr.lambdas.push_back(hv.lambda.scalar());
  }
  tr.probs = fv.probs.value().row(0).transpose();
  return tr;
}

double masked_bce(const ForwardTrace& trace, std::size_t attribute, int label) {
  if (attribute >= static_cast<std::size_t>(trace.probs.size())) {
    throw std::out_of_range("masked_bce: attribute index out of range");
  }
  const double o = std::clamp(trace.probs(static_cast<Eigen::Index>(attribute)), nd::kBceClamp,
                              1.0 - nd::kBceClamp);
  return label == 1 ? -std::log(o) : -std::log(1.0 - o);
}

PairBatch make_batch(const std::vector<corpus::TrainingExample>& examples,
                     const std::vector<std::size_t>& order, std::size_t first,
                     std::size_t count) {
  if (count == 0) throw std::invalid_argument("make_batch: empty batch");
  const Eigen::Index d = examples.at(order.at(first)).emb_a->values.size();
  PairBatch b;
  b.emb_a.resize(static_cast<Eigen::Index>(count), d);
  b.emb_b.resize(static_cast<Eigen::Index>(count), d);
  b.labels.resize(static_cast<Eigen::Index>(count), 1);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& ex = examples.at(order.at(first + i));
    const auto r = static_cast<Eigen::Index>(i);
    b.emb_a.row(r) = ex.emb_a->values.transpose();
    b.emb_b.row(r) = ex.emb_b->values.transpose();
    b.attribute.push_back(static_cast<Eigen::Index>(ex.attribute));
    b.labels(r, 0) = ex.label;
  }
  return b;
}

std::vector<double> predict(const std::vector<corpus::TrainingExample>& examples,
                            ModelParams& params, const ModelConfig& cfg, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(examples.size());
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t first = 0; first < examples.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, examples.size() - first);
    PairBatch b = make_batch(examples, order, first, count);
    Tape tape;
    ForwardVars fv = forward_batch(tape, b.emb_a, b.emb_b, params, cfg, false);
    const Matrix& probs = fv.probs.value();
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(probs(static_cast<Eigen::Index>(i), b.attribute[i]));
    }
  }
  return out;
}

}  // namespace relattr::rtsa2

namespace relattr::rtsa2 {

nd::GradCheckResult check_model_gradients(const ModelConfig& cfg, const GradCheckOptions& opt) {
  cfg.validate();
  if (opt.batch == 0) throw std::invalid_argument("gradcheck: batch must be positive");
  std::mt19937_64 gen(opt.seed);
  ModelParams params = init_params(cfg, gen());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.5, 1.5);
  const auto n = static_cast<Eigen::Index>(opt.batch);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  Matrix emb_a(n, d);
  Matrix emb_b(n, d);
  for (Eigen::Index i = 0; i < emb_a.size(); ++i) emb_a.data()[i] = normal(gen);
  for (Eigen::Index i = 0; i < emb_b.size(); ++i) emb_b.data()[i] = normal(gen);
  std::vector<Eigen::Index> attrs(opt.batch);
  Matrix labels(n, 1);
  std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(cfg.k) - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    attrs[static_cast<std::size_t>(i)] = pick(gen);
    labels(i, 0) = static_cast<double>(gen() & 1u);
  }
  for (Eigen::Index j = 0; j < params.bn_stats.running_mean.size(); ++j) {
    params.bn_stats.running_mean.data()[j] = 0.1 * normal(gen);
    params.bn_stats.running_var.data()[j] = uniform(gen);
  }
  for (auto& h : params.heads) h.lambda_raw.value(0, 0) = normal(gen);
  const std::uint64_t dropout_seed = gen();

  auto f = [&](Tape& tape) {
    ForwardVars fv = forward_batch(tape, emb_a, emb_b, params, cfg, opt.train_mode, dropout_seed);
    return masked_bce(fv, attrs, labels);
  };
  std::vector<nd::Tensor2*> inputs = params.trainable();
  if (opt.train_mode) {
    // Batch statistics cancel any constant added before the norm, so the
    // exact gradient of fc_b is zero and its difference quotient is pure
    // roundoff; relative error against the 1e-8 floor is meaningless there.
    std::erase(inputs, &params.fc_b);
  }
  return nd::grad_check(f, inputs, opt.eps);
}

}  // namespace relattr::rtsa2
