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


#include <cmath>
#include <fstream>
#include <random>

#include <doctest.h>
#include <zlib.h>

#include "oracles.hpp"
#include "relattr/rtsa2.hpp"

namespace nd = relattr::nd;
namespace rtsa2 = relattr::rtsa2;
namespace corpus = relattr::corpus;

namespace {

rtsa2::ModelConfig small_config() {
  rtsa2::ModelConfig cfg;
  cfg.d = 16;
  cfg.k = 5;
  cfg.n_heads = 2;
  cfg.scale_hidden = 8;
  cfg.predictor_hidden = 12;
  return cfg;
}

corpus::EmbeddingVector random_embedding(std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<double> n01;
  corpus::EmbeddingVector v;
  v.values.resize(static_cast<Eigen::Index>(d));
  for (auto& x : v.values) x = n01(gen);
  return v;
}

nd::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> n01;
  nd::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n01(gen);
  return m;
}

// Softmax over the two keys for each query row, computed without the tape.
Eigen::Matrix2d reference_softmax(const nd::Matrix& pair, const nd::Matrix& wq,
                                  const nd::Matrix& wk, double scale) {
  const nd::Matrix q = pair * wq;
  const nd::Matrix k = pair * wk;
  Eigen::Matrix2d out;
  for (int i = 0; i < 2; ++i) {
    const double l0 = q.row(i).dot(k.row(0)) * scale;
    const double l1 = q.row(i).dot(k.row(1)) * scale;
    const double m = std::max(l0, l1);
    const double z = std::exp(l0 - m) + std::exp(l1 - m);
    out(i, 0) = std::exp(l0 - m) / z;
    out(i, 1) = std::exp(l1 - m) / z;
  }
  return out;
}

}  // namespace

TEST_CASE("init sets every lambda to lambda_init and is seed-deterministic") {
  const auto cfg = small_config();
  auto a = rtsa2::init_params(cfg, 3);
  auto b = rtsa2::init_params(cfg, 3);
  auto c = rtsa2::init_params(cfg, 4);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) CHECK(std::abs(a.lambda(h) - 0.8) < 1e-12);
  const auto ta = a.trainable();
  const auto tb = b.trainable();
  const auto tc = c.trainable();
  REQUIRE(ta.size() == tb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i]->value == tb[i]->value);
    any_diff = any_diff || ta[i]->value != tc[i]->value;
  }
  CHECK(any_diff);
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.lambda_init = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero query and key projections give uniform differential weights") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 1);
  for (auto& h : p.heads) {
    h.w_q.value.setZero();
    h.w_k.value.setZero();
  }
  std::mt19937_64 gen(2);
  const auto tr = rtsa2::forward(random_embedding(cfg.d, gen), random_embedding(cfg.d, gen), p,
                                 cfg, false);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const double expect = (1.0 - tr.lambdas[h]) / 2.0;
    CHECK((tr.attn_maps[h].array() - expect).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("differential attention rows sum to one minus lambda") {
  const auto cfg = small_config();
  std::mt19937_64 gen(5);
  for (int draw = 0; draw < 20; ++draw) {
    auto p = rtsa2::init_params(cfg, static_cast<std::uint64_t>(draw));
    for (auto& h : p.heads) h.lambda_raw.value(0, 0) = std::normal_distribution<double>()(gen);
    const auto tr = rtsa2::forward(random_embedding(cfg.d, gen), random_embedding(cfg.d, gen), p,
                                   cfg, false);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      CHECK(tr.lambdas[h] > 0.0);
      CHECK(tr.lambdas[h] < 1.0);
      for (int r = 0; r < 2; ++r) {
        CHECK(std::abs(tr.attn_maps[h].row(r).sum() - (1.0 - tr.lambdas[h])) < 1e-10);
      }
    }
  }
}

TEST_CASE("vanishing lambda reduces to a single softmax") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 7);
  for (auto& h : p.heads) h.lambda_raw.value(0, 0) = -1000.0;
  std::mt19937_64 gen(8);
  const auto ea = random_embedding(cfg.d, gen);
  const auto eb = random_embedding(cfg.d, gen);
  const auto tr = rtsa2::forward(ea, eb, p, cfg, false);
  nd::Matrix pair(2, cfg.d);
  pair.row(0) = ea.values.transpose();
  pair.row(1) = eb.values.transpose();
  const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const auto ref = reference_softmax(pair, p.heads[h].w_q.value.leftCols(hd),
                                       p.heads[h].w_k.value.leftCols(hd),
                                       1.0 / std::sqrt(static_cast<double>(hd)));
    CHECK((tr.attn_maps[h] - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("single-pair attention rejects sequences other than two rows") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 1);
  CHECK_THROWS_AS(rtsa2::diff_attention(nd::Matrix::Zero(3, cfg.d), p, cfg, 0), nd::ShapeError);
  CHECK_THROWS_AS(rtsa2::diff_attention(nd::Matrix::Zero(1, cfg.d), p, cfg, 0), nd::ShapeError);
}

TEST_CASE("swapping the pair swaps the attended rows") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 9);
  std::mt19937_64 gen(10);
  const nd::Matrix pair = random_matrix(2, static_cast<Eigen::Index>(cfg.d), gen);
  nd::Matrix swapped(2, pair.cols());
  swapped.row(0) = pair.row(1);
  swapped.row(1) = pair.row(0);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const auto out = rtsa2::diff_attention(pair, p, cfg, h);
    const auto rev = rtsa2::diff_attention(swapped, p, cfg, h);
    CHECK((out.row(0) - rev.row(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.row(1) - rev.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gamma stays in (0, 2) and is 1 when the scale network outputs zero") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 11);
  std::mt19937_64 gen(12);
  for (int draw = 0; draw < 20; ++draw) {
    const auto tr = rtsa2::forward(random_embedding(cfg.d, gen), random_embedding(cfg.d, gen), p,
                                   cfg, false);
    CHECK(tr.gamma > 0.0);
    CHECK(tr.gamma < 2.0);
  }
  p.scale_w2.value.setZero();
  p.scale_b2.value.setZero();
  const auto tr = rtsa2::forward(random_embedding(cfg.d, gen), random_embedding(cfg.d, gen), p,
                                 cfg, false);
  CHECK(tr.gamma == 1.0);
}

TEST_CASE("amplified difference examples") {
  nd::Tape tape;
  const auto zero = tape.constant(nd::Matrix::Zero(1, 2));
  nd::Matrix b(1, 2);
  b << 1.0, 0.0;
  const auto eb = tape.constant(b);
  const auto one = tape.constant(nd::Matrix::Ones(1, 1));
  const auto dh = rtsa2::amplify_delta(zero, eb, one);
  CHECK(dh.value()(0, 0) == doctest::Approx(0.76159).epsilon(1e-5));
  CHECK(dh.value()(0, 1) == 0.0);

  const auto half = tape.constant(nd::Matrix::Constant(1, 1, 0.5));
  const auto dh_half = rtsa2::amplify_delta(zero, eb, half);
  CHECK(std::abs(dh_half.value()(0, 0) - 0.5 * dh.value()(0, 0)) < 1e-15);

  std::mt19937_64 gen(13);
  const auto same = tape.constant(random_matrix(3, 4, gen));
  const auto gamma = tape.constant(nd::Matrix::Constant(3, 1, 1.7));
  CHECK(rtsa2::amplify_delta(same, same, gamma).value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical inputs give an exactly zero amplified difference") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 14);
  std::mt19937_64 gen(15);
  const auto e = random_embedding(cfg.d, gen);
  const auto tr = rtsa2::forward(e, e, p, cfg, false);
  CHECK(tr.delta_hat.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("default-shape forward yields 34 probabilities in (0, 1)") {
  const rtsa2::ModelConfig cfg;
  auto p = rtsa2::init_params(cfg, 0);
  std::mt19937_64 gen(16);
  const auto tr = rtsa2::forward(random_embedding(256, gen), random_embedding(256, gen), p, cfg,
                                 false);
  REQUIRE(tr.probs.size() == 34);
  CHECK(tr.probs.minCoeff() > 0.0);
  CHECK(tr.probs.maxCoeff() < 1.0);
  CHECK(tr.lambdas.size() == 4);
}

TEST_CASE("eval-mode forward is deterministic and train mode depends on the dropout seed") {
  auto cfg = small_config();
  cfg.dropout_rate = 0.5;
  auto p = rtsa2::init_params(cfg, 17);
  std::mt19937_64 gen(18);
  const nd::Matrix a = random_matrix(4, 16, gen);
  const nd::Matrix b = random_matrix(4, 16, gen);
  auto run = [&](bool train, std::uint64_t seed) {
    nd::Tape tape;
    auto saved = p.bn_stats;
    const nd::Matrix out = rtsa2::forward_batch(tape, a, b, p, cfg, train, seed).probs.value();
    p.bn_stats = saved;
    return out;
  };
  CHECK(run(false, 1) == run(false, 2));
  CHECK(run(true, 1) == run(true, 1));
  CHECK(run(true, 1) != run(true, 2));
}

TEST_CASE("masked BCE at probability one half is ln 2") {
  rtsa2::ForwardTrace tr;
  tr.probs = Eigen::VectorXd::Constant(3, 0.5);
  CHECK(rtsa2::masked_bce(tr, 1, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(rtsa2::masked_bce(tr, 2, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(rtsa2::masked_bce(tr, 3, 1), std::out_of_range);
}

TEST_CASE("only the target attribute receives gradient") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 19);
  std::mt19937_64 gen(20);
  const nd::Matrix a = random_matrix(6, 16, gen);
  const nd::Matrix b = random_matrix(6, 16, gen);
  const std::vector<Eigen::Index> attr{1, 3, 1, 3, 1, 3};
  nd::Matrix labels(6, 1);
  labels << 1, 0, 1, 1, 0, 0;
  nd::Tape tape;
  p.zero_grad();
  const auto fv = rtsa2::forward_batch(tape, a, b, p, cfg, false);
  const auto loss = rtsa2::masked_bce(fv, attr, labels);
  tape.backward(loss);
  const auto& g = fv.logits.grad();
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      if (c != attr[static_cast<std::size_t>(i)]) CHECK(g(i, c) == 0.0);
    }
  }
  for (Eigen::Index c : {0, 2, 4}) CHECK(p.w_out.grad.col(c).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.w_out.grad.col(1).cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.w_out.grad.col(3).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  auto cfg = small_config();
  rtsa2::GradCheckOptions opt;
  SUBCASE("eval mode") {}
  SUBCASE("train mode") { opt.train_mode = true; }
  SUBCASE("without value projection") { cfg.use_value_projection = false; }
  SUBCASE("attention bypass") { cfg.bypass_attention = true; }
  SUBCASE("full-dimension scaling") { cfg.full_dim_scaling = true; }
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    opt.seed = seed;
    const auto r = rtsa2::check_model_gradients(cfg, opt);
    CHECK(r.coordinates > 0);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
}

TEST_CASE("the pre-norm bias has zero gradient under batch statistics") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 25);
  std::mt19937_64 gen(26);
  const nd::Matrix a = random_matrix(5, 16, gen);
  const nd::Matrix b = random_matrix(5, 16, gen);
  nd::Matrix labels(5, 1);
  labels << 1, 0, 0, 1, 1;
  nd::Tape tape;
  p.zero_grad();
  const auto fv = rtsa2::forward_batch(tape, a, b, p, cfg, true, 3);
  tape.backward(rtsa2::masked_bce(fv, {0, 1, 2, 3, 4}, labels));
  CHECK(p.fc_b.grad.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.fc_w.grad.cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("checkpoint round trip preserves predictions bit for bit") {
  relattr::testing::TempDir dir("ckpt");
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 21);
  p.bn_stats.running_mean.setConstant(0.25);
  p.bn_stats.running_var.setConstant(1.5);
  const auto path = dir.path() / "m.ckpt";
  rtsa2::save_checkpoint(path, cfg, p);
  auto [cfg2, p2] = rtsa2::load_checkpoint(path);
  CHECK(cfg2 == cfg);
  std::mt19937_64 gen(22);
  const auto ea = random_embedding(cfg.d, gen);
  const auto eb = random_embedding(cfg.d, gen);
  const auto t1 = rtsa2::forward(ea, eb, p, cfg, false);
  const auto t2 = rtsa2::forward(ea, eb, p2, cfg2, false);
  CHECK(t1.probs == t2.probs);
  CHECK(p2.bn_stats.running_var == p.bn_stats.running_var);
}

TEST_CASE("checkpoint corruption, version and truncation are detected") {
  relattr::testing::TempDir dir("ckpt");
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 23);
  const auto path = dir.path() / "m.ckpt";
  rtsa2::save_checkpoint(path, cfg, p);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto with_crc = [](std::string b) {
    const auto body = b.size() - 4;
    const auto c = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(body)));
    for (int i = 0; i < 4; ++i) b[body + i] = static_cast<char>((c >> (8 * i)) & 0xFFu);
    return b;
  };

  SUBCASE("flipped payload byte") {
    auto b = bytes;
    b[b.size() / 2] = static_cast<char>(b[b.size() / 2] ^ 0x10);
    write(b);
  }
  SUBCASE("truncated") { write(bytes.substr(0, bytes.size() - 9)); }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write(b);
  }
  SUBCASE("future version with a valid checksum") {
    auto b = bytes;
    b[8] = 2;
    write(with_crc(b));
  }
  CHECK_THROWS_AS(rtsa2::load_checkpoint(path), rtsa2::CheckpointError);
}

TEST_CASE("forward rejects embeddings of the wrong dimension") {
  const auto cfg = small_config();
  auto p = rtsa2::init_params(cfg, 24);
  nd::Tape tape;
  CHECK_THROWS_AS(rtsa2::forward_batch(tape, nd::Matrix::Zero(2, 8), nd::Matrix::Zero(2, 8), p,
                                       cfg, false),
                  nd::ShapeError);
}
