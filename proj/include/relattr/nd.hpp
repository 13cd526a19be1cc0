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

#ifndef RELATTR_ND_HPP_
#define RELATTR_ND_HPP_

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

// A small dense reverse-mode differentiation kernel. Values are row-major
// double matrices; a Tape records every primitive applied during a forward
// pass and replays the registered backward rules in reverse order.
namespace relattr::nd {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A persistent tensor, typically a learnable parameter. Gradients from
// Tape::backward accumulate into `grad` when `requires_grad` is set.
struct Tensor2 {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;

  Tensor2() = default;
  explicit Tensor2(Matrix v, bool trainable = false);

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void zero_grad();
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Gradient of the most recent backward() call's loss w.r.t. this value.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Arguments handed to a backward rule. `in_grad[i]` is null when input i
// does not need a gradient.
struct BackwardContext {
  const Matrix& out;
  const Matrix& out_grad;
  std::vector<const Matrix*> in;
  std::vector<Matrix*> in_grad;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Reads `t` by reference; `t` must outlive the tape.
  Var leaf(Tensor2& t);
  Var constant(Matrix value);

  // Appends a primitive application. `rule` may be empty for outputs that
  // never need gradients.
  Var record(Matrix value, std::vector<Var> inputs, BackwardRule rule,
             const char* op_name);

  // Propagates d(loss)/d(.) through every recorded node in reverse order.
  // Intermediate gradients are recomputed from scratch on each call; leaf
  // gradients accumulate into their Tensor2::grad.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const;

 private:
  struct Node {
    Matrix own;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    Tensor2* leaf = nullptr;
    bool needs_grad = false;
  };

  void check_owned(const Var& v, const char* what) const;

  std::deque<Node> nodes_;
};

// Primitives. Every primitive validates shapes, rejects non-finite outputs,
// and registers a backward rule.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double c);
// Multiplies `a` by the 1x1 value `s`.
Var scale_by(const Var& a, const Var& s);
// Row i of `a` scaled by c(i, 0); `c` is N x 1.
Var mul_col(const Var& c, const Var& a);
// Adds the 1 x M row vector `r` to every row of `a`.
Var add_row(const Var& a, const Var& r);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
// out(i, 0) = a(i, index[i]).
Var gather_cols(const Var& a, const std::vector<Eigen::Index>& index);
Var transpose(const Var& a);
Var row_softmax(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
// Euclidean norm of each row, N x 1. For a single row this is the vector
// norm. The gradient at a zero row is taken as zero.
Var l2_norm(const Var& a);
// out(i, 0) = <a.row(i), b.row(i)>.
Var row_dot(const Var& a, const Var& b);
Var sum(const Var& a);
Var mean(const Var& a);
// x * W + b, with b a 1 x out row.
Var affine(const Var& x, const Var& w, const Var& b);
// Mean binary cross-entropy between probabilities `p` and constant targets.
// Logs are evaluated on p clamped to [kBceClamp, 1 - kBceClamp].
inline constexpr double kBceClamp = 1e-12;
Var bce(const Var& p, const Matrix& targets);
// Inverted dropout. Identity when `train_mode` is false; otherwise keeps
// each unit with probability 1 - rate and scales kept units by 1/(1-rate).
Var dropout(const Var& a, double rate, std::uint64_t seed, bool train_mode);

struct BatchNormStats {
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchNormStats() = default;
  explicit BatchNormStats(Eigen::Index width);
};

// Per-column normalization with learnable gain/shift (each 1 x M). Train
// mode normalizes by batch statistics and updates the running estimates
// (running = momentum * running + (1 - momentum) * batch); eval mode uses
// the running estimates.
Var batch_stat_norm(const Var& x, const Var& gain, const Var& shift,
                    BatchNormStats& stats, bool train_mode);

double logistic(double x);
double logit(double p);

// Central-difference gradient check.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input index>[r,c]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFunction = std::function<Var(Tape&)>;

// Compares analytic gradients of `f` w.r.t. every coordinate of `inputs`
// against (f(x+eps) - f(x-eps)) / (2 eps). Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). `f` must build its graph on the given tape
// reading the current values of `inputs`; it must be deterministic.
GradCheckResult grad_check(const ScalarFunction& f,
                           const std::vector<Tensor2*>& inputs,
                           double eps = 1e-6);

}  // namespace relattr::nd

#endif  // RELATTR_ND_HPP_
