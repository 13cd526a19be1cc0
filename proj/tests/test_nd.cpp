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
#include <random>

#include <doctest.h>

#include "relattr/nd.hpp"

namespace nd = relattr::nd;
using nd::Matrix;
using nd::Tape;
using nd::Tensor2;
using nd::Var;

namespace {

Tensor2 random_tensor(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  return Tensor2(m, true);
}

// Contracts a matrix-valued output to a scalar with fixed random weights so
// every output coordinate contributes to the checked gradient.
Var contract(Tape& tape, const Var& x, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix w(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(gen);
  return nd::sum(nd::mul(x, tape.constant(w)));
}

}  // namespace

TEST_CASE("row_softmax of zero logits is uniform") {
  Tape tape;
  Var s = nd::row_softmax(tape.constant(Matrix::Zero(1, 2)));
  CHECK(s.value()(0, 0) == doctest::Approx(0.5));
  CHECK(s.value()(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("row_softmax rows are positive and sum to one") {
  std::mt19937_64 gen(7);
  Tensor2 x = random_tensor(6, 5, gen, -30.0, 30.0);
  Tape tape;
  Var s = nd::row_softmax(tape.leaf(x));
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK(std::abs(s.value().row(i).sum() - 1.0) < 1e-12);
    CHECK(s.value().row(i).minCoeff() > 0.0);
  }
}

TEST_CASE("row_softmax rejects an empty row") {
  Tape tape;
  CHECK_THROWS_AS(nd::row_softmax(tape.constant(Matrix(2, 0))), nd::ShapeError);
}

TEST_CASE("sigmoid at zero and its derivative") {
  Tensor2 z(Matrix::Zero(1, 1), true);
  Tape tape;
  Var s = nd::sigmoid(tape.leaf(z));
  CHECK(s.scalar() == 0.5);
  tape.backward(nd::sum(s));
  CHECK(z.grad(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("l2_norm of [3,4] is 5") {
  Tape tape;
  Matrix v(1, 2);
  v << 3.0, 4.0;
  CHECK(nd::l2_norm(tape.constant(v)).scalar() == 5.0);
}

TEST_CASE("gradient of sum(W) is all ones") {
  std::mt19937_64 gen(1);
  Tensor2 w = random_tensor(3, 4, gen);
  Tape tape;
  tape.backward(nd::sum(tape.leaf(w)));
  CHECK(w.grad.isApproxToConstant(1.0));
}

TEST_CASE("bce(sigmoid(z), 1) at z=0 has dloss/dz = -0.5") {
  Tensor2 z(Matrix::Zero(1, 1), true);
  Tape tape;
  Var loss = nd::bce(nd::sigmoid(tape.leaf(z)), Matrix::Ones(1, 1));
  CHECK(loss.scalar() == doctest::Approx(std::log(2.0)));
  tape.backward(loss);
  CHECK(z.grad(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("backward accumulates leaf gradients across calls") {
  Tensor2 w(Matrix::Constant(2, 2, 0.3), true);
  Tape tape;
  Var loss = nd::sum(tape.leaf(w));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(w.grad.isApproxToConstant(2.0));
}

TEST_CASE("backward rejects non-scalar losses and foreign variables") {
  Tape tape;
  Var x = tape.constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), nd::ShapeError);
  Tape other;
  Var y = nd::sum(other.constant(Matrix::Ones(1, 1)));
  CHECK_THROWS_AS(tape.backward(y), nd::TapeError);
  CHECK_THROWS_AS(nd::add(x, other.constant(Matrix::Ones(2, 2))), nd::TapeError);
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  Var a = tape.constant(Matrix::Ones(2, 3));
  Var b = tape.constant(Matrix::Ones(2, 3));
  CHECK_THROWS_AS(nd::matmul(a, b), nd::ShapeError);
  CHECK_THROWS_AS(nd::add(a, tape.constant(Matrix::Ones(3, 2))), nd::ShapeError);
  CHECK_THROWS_AS(nd::concat_rows({a, tape.constant(Matrix::Ones(1, 2))}), nd::ShapeError);
}

TEST_CASE("non-finite results raise NumericError") {
  Tape tape;
  Var big = tape.constant(Matrix::Constant(1, 1, 1e300));
  CHECK_THROWS_AS(nd::mul(big, big), nd::NumericError);
}

TEST_CASE("matmul is associative within 1e-10") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor2 a = random_tensor(3, 4, gen), b = random_tensor(4, 5, gen), c = random_tensor(5, 2, gen);
    Tape tape;
    Var l = nd::matmul(nd::matmul(tape.leaf(a), tape.leaf(b)), tape.leaf(c));
    Var r = nd::matmul(tape.leaf(a), nd::matmul(tape.leaf(b), tape.leaf(c)));
    CHECK((l.value() - r.value()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("dropout is the identity in eval mode and deterministic in train mode") {
  std::mt19937_64 gen(4);
  Tensor2 x = random_tensor(20, 30, gen);
  Tape tape;
  Var v = tape.leaf(x);
  CHECK(nd::dropout(v, 0.3, 11, false).value() == x.value);
  const Matrix a = nd::dropout(v, 0.3, 11, true).value();
  const Matrix b = nd::dropout(v, 0.3, 11, true).value();
  CHECK(a == b);
  std::size_t kept = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] != 0.0) {
      ++kept;
      CHECK(a.data()[i] == doctest::Approx(x.value.data()[i] / 0.7).epsilon(1e-15));
    }
  }
  CHECK(kept > 300);
  CHECK(kept < 540);
}

TEST_CASE("batch_stat_norm normalizes columns and tracks running statistics") {
  std::mt19937_64 gen(5);
  Tensor2 x = random_tensor(16, 3, gen, 2.0, 6.0);
  Tensor2 gain(Matrix::Ones(1, 3), true), shift(Matrix::Zero(1, 3), true);
  nd::BatchNormStats stats(3);
  Tape tape;
  Var y = nd::batch_stat_norm(tape.leaf(x), tape.leaf(gain), tape.leaf(shift), stats, true);
  for (Eigen::Index c = 0; c < 3; ++c) {
    CHECK(std::abs(y.value().col(c).mean()) < 1e-12);
    CHECK(y.value().col(c).squaredNorm() / 16.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
  const Eigen::RowVectorXd mu = x.value.colwise().mean();
  CHECK((stats.running_mean - 0.1 * mu).cwiseAbs().maxCoeff() < 1e-12);
  // Eval mode uses the running estimates only.
  Var e = nd::batch_stat_norm(tape.leaf(x), tape.leaf(gain), tape.leaf(shift), stats, false);
  const double expect = (x.value(0, 0) - stats.running_mean(0, 0)) /
                        std::sqrt(stats.running_var(0, 0) + stats.eps);
  CHECK(e.value()(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("logistic and logit are inverse") {
  for (double p : {1e-6, 0.2, 0.5, 0.8, 1 - 1e-6}) {
    CHECK(nd::logistic(nd::logit(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(nd::logistic(-1000.0) == 0.0);
  CHECK(nd::logistic(1000.0) == 1.0);
}

TEST_CASE("grad_check of a quadratic form is exact up to roundoff") {
  std::mt19937_64 gen(8);
  Tensor2 x = random_tensor(1, 5, gen);
  Tensor2 a = random_tensor(5, 5, gen);
  auto f = [&](Tape& t) {
    Var xv = t.leaf(x);
    return nd::sum(nd::mul(nd::matmul(xv, t.leaf(a)), xv));
  };
  // Central differences are exact on quadratics for any step; a wide step
  // keeps cancellation roundoff below the bound.
  const auto r = nd::grad_check(f, {&x, &a}, 1e-3);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coordinates == 30);
}

TEST_CASE("grad_check flags a wrong backward rule") {
  std::mt19937_64 gen(9);
  Tensor2 x = random_tensor(2, 3, gen);
  auto f = [&](Tape& t) {
    Var v = t.leaf(x);
    // Square with a backward rule that forgets the factor 2.
    Var sq = t.record(v.value().cwiseAbs2(), {v},
                      [](const nd::BackwardContext& c) {
                        *c.in_grad[0] += c.out_grad.cwiseProduct(*c.in[0]);
                      },
                      "bad_square");
    return nd::sum(sq);
  };
  CHECK(nd::grad_check(f, {&x}).max_rel_error > 0.1);
}

TEST_CASE("grad_check rejects bad eps and non-deterministic functions") {
  Tensor2 x(Matrix::Ones(1, 2), true);
  auto f = [&](Tape& t) { return nd::sum(t.leaf(x)); };
  CHECK_THROWS_AS(nd::grad_check(f, {&x}, 1e-2), std::invalid_argument);
  std::uint64_t calls = 0;
  auto g = [&](Tape& t) { return nd::sum(nd::dropout(t.leaf(x), 0.5, ++calls, true)); };
  // Different seeds each call; at least one evaluation differs.
  bool rejected = false;
  for (int i = 0; i < 10 && !rejected; ++i) {
    try {
      nd::grad_check(g, {&x});
    } catch (const std::invalid_argument&) {
      rejected = true;
    }
  }
  CHECK(rejected);
}

TEST_CASE("every primitive passes grad_check below 1e-5") {
  std::mt19937_64 gen(10);
  Tensor2 a = random_tensor(3, 4, gen), b = random_tensor(3, 4, gen);
  Tensor2 m = random_tensor(4, 2, gen);
  Tensor2 row = random_tensor(1, 4, gen);
  Tensor2 col = random_tensor(3, 1, gen);
  Tensor2 s = random_tensor(1, 1, gen);
  Tensor2 p = random_tensor(3, 1, gen, 0.05, 0.95);
  Tensor2 gain = random_tensor(1, 4, gen, 0.5, 1.5), shift = random_tensor(1, 4, gen);
  const Matrix targets = (Matrix(3, 1) << 1, 0, 1).finished();

  struct Case {
    const char* name;
    std::function<Var(Tape&)> f;
    std::vector<Tensor2*> inputs;
  };
  nd::BatchNormStats stats(4);
  std::vector<Case> cases = {
      {"matmul", [&](Tape& t) { return contract(t, nd::matmul(t.leaf(a), t.leaf(m)), 1); }, {&a, &m}},
      {"add", [&](Tape& t) { return contract(t, nd::add(t.leaf(a), t.leaf(b)), 2); }, {&a, &b}},
      {"sub", [&](Tape& t) { return contract(t, nd::sub(t.leaf(a), t.leaf(b)), 3); }, {&a, &b}},
      {"mul", [&](Tape& t) { return contract(t, nd::mul(t.leaf(a), t.leaf(b)), 4); }, {&a, &b}},
      {"scale", [&](Tape& t) { return contract(t, nd::scale(t.leaf(a), -1.7), 5); }, {&a}},
      {"scale_by", [&](Tape& t) { return contract(t, nd::scale_by(t.leaf(a), t.leaf(s)), 6); }, {&a, &s}},
      {"mul_col", [&](Tape& t) { return contract(t, nd::mul_col(t.leaf(col), t.leaf(a)), 7); }, {&a, &col}},
      {"add_row", [&](Tape& t) { return contract(t, nd::add_row(t.leaf(a), t.leaf(row)), 8); }, {&a, &row}},
      {"concat_rows", [&](Tape& t) { return contract(t, nd::concat_rows({t.leaf(a), t.leaf(row)}), 9); }, {&a, &row}},
      {"concat_cols", [&](Tape& t) { return contract(t, nd::concat_cols({t.leaf(a), t.leaf(col)}), 10); }, {&a, &col}},
      {"slice_cols", [&](Tape& t) { return contract(t, nd::slice_cols(t.leaf(a), 1, 2), 11); }, {&a}},
      {"gather_cols", [&](Tape& t) { return contract(t, nd::gather_cols(t.leaf(a), {3, 0, 2}), 12); }, {&a}},
      {"transpose", [&](Tape& t) { return contract(t, nd::transpose(t.leaf(a)), 13); }, {&a}},
      {"row_softmax", [&](Tape& t) { return contract(t, nd::row_softmax(t.leaf(a)), 14); }, {&a}},
      {"tanh", [&](Tape& t) { return contract(t, nd::tanh(t.leaf(a)), 15); }, {&a}},
      {"sigmoid", [&](Tape& t) { return contract(t, nd::sigmoid(t.leaf(a)), 16); }, {&a}},
      {"l2_norm", [&](Tape& t) { return contract(t, nd::l2_norm(t.leaf(a)), 17); }, {&a}},
      {"row_dot", [&](Tape& t) { return contract(t, nd::row_dot(t.leaf(a), t.leaf(b)), 18); }, {&a, &b}},
      {"mean", [&](Tape& t) { return nd::mean(nd::mul(t.leaf(a), t.leaf(b))); }, {&a, &b}},
      {"affine", [&](Tape& t) { return contract(t, nd::affine(t.leaf(a), t.leaf(m), nd::slice_cols(t.leaf(row), 0, 2)), 19); }, {&a, &m, &row}},
      {"bce", [&](Tape& t) { return nd::bce(t.leaf(p), targets); }, {&p}},
      {"dropout", [&](Tape& t) { return contract(t, nd::dropout(t.leaf(a), 0.4, 77, true), 20); }, {&a}},
      {"batch_stat_norm train", [&](Tape& t) { return contract(t, nd::batch_stat_norm(t.leaf(a), t.leaf(gain), t.leaf(shift), stats, true), 21); }, {&a, &gain, &shift}},
      {"batch_stat_norm eval", [&](Tape& t) { return contract(t, nd::batch_stat_norm(t.leaf(a), t.leaf(gain), t.leaf(shift), stats, false), 22); }, {&a, &gain, &shift}},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    const auto r = nd::grad_check(c.f, c.inputs);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("l2_norm gradient at a zero row is zero") {
  Tensor2 z(Matrix::Zero(1, 3), true);
  Tape tape;
  tape.backward(nd::sum(nd::l2_norm(tape.leaf(z))));
  CHECK(z.grad.isZero(0.0));
}
