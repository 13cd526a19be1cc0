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
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <doctest.h>

#include "oracles.hpp"
#include "relattr/graph_augment.hpp"
#include "relattr/trainer.hpp"

namespace corpus = relattr::corpus;
namespace nd = relattr::nd;
namespace rtsa2 = relattr::rtsa2;
namespace trainer = relattr::trainer;

namespace {

rtsa2::ModelConfig small_model(std::size_t d, std::size_t k) {
  rtsa2::ModelConfig cfg;
  cfg.d = d;
  cfg.k = k;
  cfg.n_heads = 2;
  cfg.scale_hidden = 8;
  cfg.predictor_hidden = 16;
  return cfg;
}

struct Fixture {
  corpus::SynthCorpus synth;
  corpus::CorpusSplit split;
};

Fixture small_fixture(std::uint64_t seed) {
  corpus::SynthConfig sc;
  sc.d = 16;
  sc.seed = seed;
  Fixture f{corpus::synth_corpus(sc), {}};
  f.split = corpus::make_corpus_split(f.synth.split, f.synth.speakers, f.synth.store,
                                      corpus::ExpandConfig{}, seed);
  return f;
}

trainer::TrainConfig quick_train() {
  trainer::TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 3;
  tc.batch_size = 32;
  return tc;
}

}  // namespace

TEST_CASE("adam with zero gradients leaves parameters unchanged and advances t") {
  nd::Tensor2 w(nd::Matrix::Constant(2, 3, 0.7), true);
  w.zero_grad();
  std::vector<nd::Tensor2*> ps{&w};
  auto state = trainer::make_adam_state(ps);
  trainer::adam_step(ps, state, trainer::TrainConfig{});
  CHECK(state.t == 1);
  CHECK(w.value == nd::Matrix::Constant(2, 3, 0.7));
}

TEST_CASE("first adam step moves each coordinate by about lr") {
  trainer::TrainConfig cfg;
  cfg.lr = 1e-3;
  for (double g : {1e-3, 0.5, -4.0}) {
    nd::Tensor2 w(nd::Matrix::Constant(1, 1, 2.0), true);
    w.grad = nd::Matrix::Constant(1, 1, g);
    std::vector<nd::Tensor2*> ps{&w};
    auto state = trainer::make_adam_state(ps);
    trainer::adam_step(ps, state, cfg);
    const double expect = cfg.lr * std::abs(g) / (std::abs(g) + cfg.eps);
    CHECK(std::abs(2.0 - w.value(0, 0)) == doctest::Approx(expect).epsilon(1e-9));
    CHECK((w.value(0, 0) < 2.0) == (g > 0));
  }
}

TEST_CASE("adam matches a scalar reference over several steps") {
  trainer::TrainConfig cfg;
  cfg.lr = 0.01;
  nd::Tensor2 w(nd::Matrix::Constant(1, 1, 1.0), true);
  std::vector<nd::Tensor2*> ps{&w};
  auto state = trainer::make_adam_state(ps);
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * x - 0.3;
    w.grad = nd::Matrix::Constant(1, 1, 2.0 * w.value(0, 0) - 0.3);
    trainer::adam_step(ps, state, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= cfg.lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + cfg.eps);
    CHECK(w.value(0, 0) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("non-finite gradients abort the step without touching parameters") {
  nd::Tensor2 a(nd::Matrix::Constant(1, 2, 1.0), true);
  nd::Tensor2 b(nd::Matrix::Constant(1, 2, 1.0), true);
  a.grad = nd::Matrix::Constant(1, 2, 0.5);
  b.grad = nd::Matrix::Constant(1, 2, 0.5);
  b.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  std::vector<nd::Tensor2*> ps{&a, &b};
  auto state = trainer::make_adam_state(ps);
  CHECK_THROWS_AS(trainer::adam_step(ps, state, trainer::TrainConfig{}), trainer::DivergenceError);
  CHECK(a.value == nd::Matrix::Constant(1, 2, 1.0));
  CHECK(b.value == nd::Matrix::Constant(1, 2, 1.0));
  CHECK(state.t == 0);
}

TEST_CASE("train config validation") {
  auto tc = quick_train();
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = quick_train();
  tc.lr = -1.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("zero epochs returns the initial parameters and an empty history") {
  const auto f = small_fixture(1);
  auto tc = quick_train();
  tc.epochs = 0;
  const auto mc = small_model(16, 4);
  auto r = trainer::train(f.split, tc, mc, {});
  CHECK(r.history.epochs.empty());
  // The initial weights come from the first draw of the seeded generator.
  std::mt19937_64 gen(tc.seed);
  auto init = rtsa2::init_params(mc, gen());
  const auto a = r.params.trainable();
  const auto b = init.trainable();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("training is bitwise reproducible") {
  const auto f = small_fixture(2);
  const auto mc = small_model(16, 4);
  auto r1 = trainer::train(f.split, quick_train(), mc, {});
  auto r2 = trainer::train(f.split, quick_train(), mc, {});
  const auto a = r1.params.trainable();
  const auto b = r2.params.trainable();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  CHECK(r1.params.bn_stats.running_mean == r2.params.bn_stats.running_mean);
  REQUIRE(r1.history.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(r1.history.epochs[e].epoch == e + 1);
    CHECK(r1.history.epochs[e].train_loss == r2.history.epochs[e].train_loss);
    CHECK(std::isfinite(r1.history.epochs[e].train_loss));
  }
}

TEST_CASE("the embedding store is not modified by training") {
  const auto f = small_fixture(3);
  std::map<std::string, Eigen::VectorXd> before;
  for (const auto& [id, e] : f.synth.store.entries()) before[id] = e->values;
  trainer::train(f.split, quick_train(), small_model(16, 4), {});
  for (const auto& [id, e] : f.synth.store.entries()) CHECK(e->values == before.at(id));
}

TEST_CASE("an empty training split is rejected") {
  corpus::CorpusSplit empty;
  CHECK_THROWS_AS(trainer::train(empty, quick_train(), small_model(16, 4), {}),
                  std::invalid_argument);
}

TEST_CASE("no_augment drops mined examples before training") {
  auto f = small_fixture(4);
  for (auto& ex : f.split.train) ex.origin = corpus::Origin::kMined;
  trainer::Ablations ab;
  ab.no_augment = true;
  CHECK_THROWS_AS(trainer::train(f.split, quick_train(), small_model(16, 4), ab),
                  std::invalid_argument);
  f.split.train.front().origin = corpus::Origin::kAnnotated;
  CHECK_NOTHROW(trainer::train(f.split, quick_train(), small_model(16, 4), ab));
}

TEST_CASE("ablations adjust the model configuration") {
  const auto f = small_fixture(5);
  trainer::Ablations ab;
  ab.no_rtsa2 = true;
  auto tc = quick_train();
  tc.epochs = 1;
  auto r = trainer::train(f.split, tc, small_model(16, 4), ab);
  CHECK(r.model_config.bypass_attention);
  CHECK(r.params.heads.empty());
  ab = {};
  ab.no_value_projection = true;
  r = trainer::train(f.split, tc, small_model(16, 4), ab);
  CHECK_FALSE(r.model_config.use_value_projection);
}

TEST_CASE("on_step reports gamma in (0, 2) and lambdas in (0, 1)") {
  const auto f = small_fixture(6);
  trainer::TrainOptions opt;
  std::size_t steps = 0;
  opt.on_step = [&](const trainer::StepInfo& s) {
    ++steps;
    CHECK(std::isfinite(s.loss));
    CHECK(s.gamma_min > 0.0);
    CHECK(s.gamma_max < 2.0);
    for (double l : s.lambdas) {
      CHECK(l > 0.0);
      CHECK(l < 1.0);
    }
  };
  trainer::train(f.split, quick_train(), small_model(16, 4), {}, opt);
  CHECK(steps > 0);
}

TEST_CASE("shuffled labels stay near chance on validation") {
  corpus::SynthConfig sc;
  sc.d = 16;
  sc.n_speakers = 30;
  sc.seed = 7;
  const auto synth = corpus::synth_corpus(sc);
  auto split = corpus::make_corpus_split(synth.split, synth.speakers, synth.store,
                                         corpus::ExpandConfig{}, 7);
  std::mt19937_64 gen(7);
  for (auto& ex : split.train) ex.label = static_cast<int>(gen() % 2);
  auto tc = quick_train();
  tc.epochs = 5;
  auto r = trainer::train(split, tc, small_model(16, 4), {});
  const auto acc = trainer::example_accuracy(split.validation, r.params, r.model_config);
  REQUIRE(acc.has_value());
  CHECK(std::abs(*acc - 0.5) <= 0.1);
}

TEST_CASE("history CSV layout") {
  relattr::testing::TempDir dir("hist");
  trainer::TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.75, 1.25});
  h.epochs.push_back({2, 0.25, std::nullopt, 2.5});
  trainer::write_history_csv(h, dir.path() / "h.csv", false);
  std::ifstream in(dir.path() / "h.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  CHECK(text.rfind("epoch,train_loss,val_acc,seconds\n", 0) == 0);
  CHECK(text.find("\n2,") != std::string::npos);
  CHECK(text.find(",,0\n") != std::string::npos);
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == 3);
}

TEST_CASE("periodic checkpoints are written and reload") {
  const auto f = small_fixture(8);
  relattr::testing::TempDir dir("periodic");
  auto tc = quick_train();
  tc.checkpoint_every = 1;
  trainer::TrainOptions opt;
  opt.checkpoint_dir = dir.path();
  trainer::train(f.split, tc, small_model(16, 4), {}, opt);
  for (int e = 1; e <= 3; ++e) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", e);
    REQUIRE(std::filesystem::exists(dir.path() / name));
    CHECK_NOTHROW(rtsa2::load_checkpoint(dir.path() / name));
  }
}

TEST_CASE("five-epoch moving average of the loss does not rise over the first half") {
  corpus::SynthConfig sc;  // the learnability fixture
  sc.margin = 0.2;
  sc.utt_per_speaker = 16;
  const auto synth = corpus::synth_corpus(sc);
  corpus::ExpandConfig ec;
  ec.per_pair = 128;
  const auto split = corpus::make_corpus_split(synth.split, synth.speakers, synth.store, ec, 0);
  rtsa2::ModelConfig mc;
  mc.d = sc.d;
  mc.k = sc.k;
  const auto r = trainer::train(split, trainer::TrainConfig{}, mc, {});
  REQUIRE(r.history.epochs.size() == 20);
  std::vector<double> avg;
  for (std::size_t end = 5; end <= 10; ++end) {
    double s = 0.0;
    for (std::size_t e = end - 5; e < end; ++e) s += r.history.epochs[e].train_loss;
    avg.push_back(s / 5.0);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] <= avg[i - 1]);
}
