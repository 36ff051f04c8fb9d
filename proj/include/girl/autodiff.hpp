#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Rows are batch items
// and columns are features throughout the library, so a batch of B vectors
// of size n is a B x n matrix. Parameters live outside the tape; binding one
// with Tape::param creates a leaf whose gradient is accumulated back into
// Parameter::grad when Tape::backward runs.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace girl::ad {

using Tensor = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

// Non-owning list of parameters of a model, used by optimizers and
// checkpoints. Order is the declaration order of the owning model.
using ParamRefs = std::vector<Parameter*>;

void zero_grads(const ParamRefs& params);

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v);
  Var param(Parameter& p);

  // Accumulates d(root)/d(param) into every bound parameter's grad.
  // Throws ContractViolation when root is not 1x1.
  void backward(Var root);

  // Records a derived node. `inputs` decide whether the node needs a
  // gradient at all; `back` is skipped for nodes that do not.
  Var push(Tensor v, std::initializer_list<Var> inputs, BackFn back);
  Var push(Tensor v, const std::vector<Var>& inputs, BackFn back);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  // grad(id) += g, allocating on first touch. No-op for constant nodes.
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // While at least one FrozenScope is alive, param() binds parameters as
  // constants, so gradients flow through them to inputs but not into them.
  class FrozenScope {
   public:
    explicit FrozenScope(Tape& t) : t_(t) { ++t_.frozen_; }
    ~FrozenScope() { --t_.frozen_; }
    FrozenScope(const FrozenScope&) = delete;
    FrozenScope& operator=(const FrozenScope&) = delete;

   private:
    Tape& t_;
  };

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackFn back;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> leaves_;
  int frozen_ = 0;
};

// Elementwise binary ops accept equal shapes, or a right operand that is a
// 1 x n row broadcast over rows, or a 1 x 1 scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var matmul(Var a, Var b);
// a b^T.
Var matmul_nt(Var a, Var b);
// x W^T + b for x (B x in), W (out x in), b (1 x out).
Var linear(Var x, Var w, Var b);
Var transpose(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var elu(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
// Per-row sum: (B x n) -> (B x 1).
Var row_sum(Var a);
// Per-column mean: (B x n) -> (1 x n).
Var col_mean(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);
// Repeats a 1 x n row `times` times horizontally: 1 x (n*times).
Var tile_cols(Var a, Eigen::Index times);
// Row-major reshape (element order read row by row).
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
// Row b of the result is row b of options[choice[b]].
Var select_rows(const std::vector<Var>& options, const std::vector<int>& choice);

Var softmax_rows(Var a);
// Per-row standardization to zero mean, unit variance (no affine part).
Var layer_norm_rows(Var a, double eps = 1e-5);

Var stop_gradient(Var a);

}  // namespace girl::ad
