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

#include "relattr/nd.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace relattr::nd {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a,
                             const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(op, a.value(), b.value());
  }
}

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw TapeError("operand is not on any tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw TapeError("operands live on different tapes");
  return t;
}

void accumulate(Matrix* dst, const Matrix& g) {
  if (dst != nullptr) *dst += g;
}

}  // namespace

Tensor2::Tensor2(Matrix v, bool trainable)
    : value(std::move(v)), requires_grad(trainable) {
  if (requires_grad) grad = Matrix::Zero(value.rows(), value.cols());
}

void Tensor2::zero_grad() {
  grad = Matrix::Zero(value.rows(), value.cols());
}

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw TapeError("value() of an untaped Var");
  return tape_->value(id_);
}

const Matrix& Var::grad() const {
  if (tape_ == nullptr) throw TapeError("grad() of an untaped Var");
  return tape_->grad(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() of a non-1x1 value");
  return v(0, 0);
}

Var Tape::leaf(Tensor2& t) {
  if (!t.value.allFinite()) throw NumericError("leaf tensor is not finite");
  Node n;
  n.leaf = &t;
  n.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant is not finite");
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardRule rule,
                 const char* op_name) {
  if (!value.allFinite()) {
    throw NumericError(std::string(op_name) + ": non-finite result");
  }
  Node n;
  n.own = std::move(value);
  for (const Var& v : inputs) {
    check_owned(v, op_name);
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (n.needs_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw TapeError(std::string(what) + ": value was not recorded on this tape");
  }
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.leaf != nullptr ? n.leaf->value : n.own;
}

const Matrix& Tape::grad(std::size_t id) const { return nodes_.at(id).grad; }

void Tape::backward(const Var& loss) {
  check_owned(loss, "backward");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(lv));
  }
  const std::size_t last = loss.id();
  for (std::size_t i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      const Matrix& v = value(i);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
  }
  if (!nodes_[last].needs_grad) return;
  nodes_[last].grad(0, 0) = 1.0;

  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.leaf != nullptr) {
      Tensor2& t = *n.leaf;
      if (t.grad.rows() != t.value.rows() || t.grad.cols() != t.value.cols()) {
        t.zero_grad();
      }
      t.grad += n.grad;
      continue;
    }
    if (!n.rule) continue;
    BackwardContext ctx{n.own, n.grad, {}, {}};
    ctx.in.reserve(n.inputs.size());
    ctx.in_grad.reserve(n.inputs.size());
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      ctx.in.push_back(&value(in));
      ctx.in_grad.push_back(src.needs_grad ? &src.grad : nullptr);
    }
    n.rule(ctx);
  }
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) *c.in_grad[0] += c.out_grad * c.in[1]->transpose();
                    if (c.in_grad[1]) *c.in_grad[1] += c.in[0]->transpose() * c.out_grad;
                  },
                  "matmul");
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  return t.record(a.value() + b.value(), {a, b},
                  [](const BackwardContext& c) {
                    accumulate(c.in_grad[0], c.out_grad);
                    accumulate(c.in_grad[1], c.out_grad);
                  },
                  "add");
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  return t.record(a.value() - b.value(), {a, b},
                  [](const BackwardContext& c) {
                    accumulate(c.in_grad[0], c.out_grad);
                    if (c.in_grad[1]) *c.in_grad[1] -= c.out_grad;
                  },
                  "sub");
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) *c.in_grad[0] += c.out_grad.cwiseProduct(*c.in[1]);
                    if (c.in_grad[1]) *c.in_grad[1] += c.out_grad.cwiseProduct(*c.in[0]);
                  },
                  "mul");
}

Var scale(const Var& a, double k) {
  Tape& t = tape_of(a);
  return t.record(a.value() * k, {a},
                  [k](const BackwardContext& c) {
                    if (c.in_grad[0]) *c.in_grad[0] += k * c.out_grad;
                  },
                  "scale");
}

Var scale_by(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s);
  if (s.rows() != 1 || s.cols() != 1) shape_fail("scale_by", a.value(), s.value());
  Matrix out = a.value() * s.scalar();
  return t.record(std::move(out), {a, s},
                  [](const BackwardContext& c) {
                    const double k = (*c.in[1])(0, 0);
                    if (c.in_grad[0]) *c.in_grad[0] += k * c.out_grad;
                    if (c.in_grad[1]) {
                      (*c.in_grad[1])(0, 0) += c.out_grad.cwiseProduct(*c.in[0]).sum();
                    }
                  },
                  "scale_by");
}

Var mul_col(const Var& col, const Var& a) {
  Tape& t = tape_of(col, a);
  if (col.cols() != 1 || col.rows() != a.rows()) {
    shape_fail("mul_col", col.value(), a.value());
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.record(std::move(out), {col, a},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) {
                      *c.in_grad[0] += c.out_grad.cwiseProduct(*c.in[1]).rowwise().sum();
                    }
                    if (c.in_grad[1]) {
                      c.in_grad[1]->array() +=
                          c.out_grad.array().colwise() * c.in[0]->col(0).array();
                    }
                  },
                  "mul_col");
}

Var add_row(const Var& a, const Var& r) {
  Tape& t = tape_of(a, r);
  if (r.rows() != 1 || r.cols() != a.cols()) shape_fail("add_row", a.value(), r.value());
  Matrix out = a.value().rowwise() + r.value().row(0);
  return t.record(std::move(out), {a, r},
                  [](const BackwardContext& c) {
                    accumulate(c.in_grad[0], c.out_grad);
                    if (c.in_grad[1]) *c.in_grad[1] += c.out_grad.colwise().sum();
                  },
                  "add_row");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.cols() != cols) shape_fail("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), parts,
                  [offsets](const BackwardContext& c) {
                    for (std::size_t i = 0; i < c.in.size(); ++i) {
                      if (c.in_grad[i]) {
                        *c.in_grad[i] += c.out_grad.middleRows(offsets[i], c.in[i]->rows());
                      }
                    }
                  },
                  "concat_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = tape_of(parts.front());
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.rows() != rows) shape_fail("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index k = 0;
  for (const Var& p : parts) {
    offsets.push_back(k);
    out.middleCols(k, p.cols()) = p.value();
    k += p.cols();
  }
  return t.record(std::move(out), parts,
                  [offsets](const BackwardContext& c) {
                    for (std::size_t i = 0; i < c.in.size(); ++i) {
                      if (c.in_grad[i]) {
                        *c.in_grad[i] += c.out_grad.middleCols(offsets[i], c.in[i]->cols());
                      }
                    }
                  },
                  "concat_cols");
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  return t.record(std::move(out), {a},
                  [start, count](const BackwardContext& c) {
                    if (c.in_grad[0]) c.in_grad[0]->middleCols(start, count) += c.out_grad;
                  },
                  "slice_cols");
}

Var gather_cols(const Var& a, const std::vector<Eigen::Index>& index) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw ShapeError("gather_cols: index length must equal row count");
  }
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Eigen::Index k = index[static_cast<std::size_t>(i)];
    if (k < 0 || k >= a.cols()) throw ShapeError("gather_cols: column index out of range");
    out(i, 0) = a.value()(i, k);
  }
  return t.record(std::move(out), {a},
                  [index](const BackwardContext& c) {
                    if (!c.in_grad[0]) return;
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      (*c.in_grad[0])(static_cast<Eigen::Index>(i), index[i]) +=
                          c.out_grad(static_cast<Eigen::Index>(i), 0);
                    }
                  },
                  "gather_cols");
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) *c.in_grad[0] += c.out_grad.transpose();
                  },
                  "transpose");
}

Var row_softmax(const Var& a) {
  Tape& t = tape_of(a);
  if (a.cols() == 0) throw ShapeError("row_softmax: softmax over empty row");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (!c.in_grad[0]) return;
                    // dx = s * (g - <g, s>) per row
                    const Matrix& s = c.out;
                    Eigen::VectorXd dots = c.out_grad.cwiseProduct(s).rowwise().sum();
                    c.in_grad[0]->array() +=
                        s.array() * (c.out_grad.array().colwise() - dots.array());
                  },
                  "row_softmax");
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().tanh();
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) {
                      c.in_grad[0]->array() +=
                          c.out_grad.array() * (1.0 - c.out.array().square());
                    }
                  },
                  "tanh");
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) { return logistic(x); });
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) {
                      c.in_grad[0]->array() +=
                          c.out_grad.array() * c.out.array() * (1.0 - c.out.array());
                    }
                  },
                  "sigmoid");
}

Var l2_norm(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().rowwise().norm();
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (!c.in_grad[0]) return;
                    for (Eigen::Index i = 0; i < c.out.rows(); ++i) {
                      const double n = c.out(i, 0);
                      if (n > 0.0) {
                        c.in_grad[0]->row(i) += (c.out_grad(i, 0) / n) * c.in[0]->row(i);
                      }
                    }
                  },
                  "l2_norm");
}

Var row_dot(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("row_dot", a, b);
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.record(std::move(out), {a, b},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) {
                      c.in_grad[0]->array() += c.in[1]->array().colwise() * c.out_grad.col(0).array();
                    }
                    if (c.in_grad[1]) {
                      c.in_grad[1]->array() += c.in[0]->array().colwise() * c.out_grad.col(0).array();
                    }
                  },
                  "row_dot");
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a},
                  [](const BackwardContext& c) {
                    if (c.in_grad[0]) c.in_grad[0]->array() += c.out_grad(0, 0);
                  },
                  "sum");
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var affine(const Var& x, const Var& w, const Var& b) {
  return add_row(matmul(x, w), b);
}

Var bce(const Var& p, const Matrix& targets) {
  Tape& t = tape_of(p);
  if (targets.rows() != p.rows() || targets.cols() != p.cols()) {
    shape_fail("bce", p.value(), targets);
  }
  if (p.value().size() == 0) throw ShapeError("bce: empty operand");
  const double n = static_cast<double>(p.value().size());
  Matrix clamped = p.value().cwiseMax(kBceClamp).cwiseMin(1.0 - kBceClamp);
  const double loss =
      -(targets.array() * clamped.array().log() +
        (1.0 - targets.array()) * (1.0 - clamped.array()).log())
           .sum() /
      n;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.record(std::move(out), {p},
                  [targets, clamped, n](const BackwardContext& c) {
                    if (!c.in_grad[0]) return;
                    const double g = c.out_grad(0, 0) / n;
                    c.in_grad[0]->array() +=
                        g * (-(targets.array() / clamped.array()) +
                             (1.0 - targets.array()) / (1.0 - clamped.array()));
                  },
                  "bce");
}

Var dropout(const Var& a, double rate, std::uint64_t seed, bool train_mode) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!train_mode || rate == 0.0) return a;
  Tape& t = tape_of(a);
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(gen) ? inv : 0.0;
  }
  Matrix out = a.value().cwiseProduct(mask);
  return t.record(std::move(out), {a},
                  [mask](const BackwardContext& c) {
                    if (c.in_grad[0]) *c.in_grad[0] += c.out_grad.cwiseProduct(mask);
                  },
                  "dropout");
}

BatchNormStats::BatchNormStats(Eigen::Index width)
    : running_mean(Matrix::Zero(1, width)), running_var(Matrix::Ones(1, width)) {}

Var batch_stat_norm(const Var& x, const Var& gain, const Var& shift,
                    BatchNormStats& stats, bool train_mode) {
  Tape& t = tape_of(x, gain);
  tape_of(x, shift);
  const Eigen::Index width = x.cols();
  if (gain.rows() != 1 || gain.cols() != width) shape_fail("batch_stat_norm", x.value(), gain.value());
  if (shift.rows() != 1 || shift.cols() != width) shape_fail("batch_stat_norm", x.value(), shift.value());
  if (stats.running_mean.cols() != width || stats.running_var.cols() != width) {
    throw ShapeError("batch_stat_norm: running statistics width mismatch");
  }
  if (x.rows() == 0) throw ShapeError("batch_stat_norm: empty batch");

  const Matrix& xv = x.value();
  Eigen::RowVectorXd mu;
  Eigen::RowVectorXd var;
  if (train_mode) {
    const double n = static_cast<double>(xv.rows());
    mu = xv.colwise().mean();
    var = (xv.rowwise() - mu).array().square().colwise().sum() / n;
    const Eigen::RowVectorXd unbiased = xv.rows() > 1 ? Eigen::RowVectorXd(var * (n / (n - 1.0))) : var;
    stats.running_mean = stats.momentum * stats.running_mean + (1.0 - stats.momentum) * mu;
    stats.running_var = stats.momentum * stats.running_var + (1.0 - stats.momentum) * unbiased;
  } else {
    mu = stats.running_mean.row(0);
    var = stats.running_var.row(0);
  }
  const Eigen::RowVectorXd inv_std = (var.array() + stats.eps).rsqrt();
  Matrix xhat = (xv.rowwise() - mu).array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               shift.value().row(0).array();

  return t.record(
      std::move(out), {x, gain, shift},
      [xhat, inv_std, train_mode](const BackwardContext& c) {
        const Matrix& g = c.out_grad;
        const Eigen::RowVectorXd gamma = c.in[1]->row(0);
        if (c.in_grad[1]) *c.in_grad[1] += g.cwiseProduct(xhat).colwise().sum();
        if (c.in_grad[2]) *c.in_grad[2] += g.colwise().sum();
        if (!c.in_grad[0]) return;
        Matrix dxhat = g.array().rowwise() * gamma.array();
        if (!train_mode) {
          c.in_grad[0]->array() += dxhat.array().rowwise() * inv_std.array();
          return;
        }
        const double n = static_cast<double>(g.rows());
        const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
        const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix dx = (n * dxhat).rowwise() - s1;
        dx -= (xhat.array().rowwise() * s2.array()).matrix();
        c.in_grad[0]->array() += (dx.array().rowwise() * inv_std.array()) / n;
      },
      "batch_stat_norm");
}

}  // namespace relattr::nd
