#include "girl/autodiff.hpp"

#include "girl/error.hpp"

#include <cmath>
#include <string>

namespace girl::ad {

void zero_grads(const ParamRefs& params) {
  for (auto* p : params) p->zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const auto& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar on non-scalar value");
  return v(0, 0);
}

Var Tape::constant(Tensor v) {
  nodes_.push_back(Node{std::move(v), Tensor(), nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (frozen_ > 0) return constant(p.value);
  nodes_.push_back(Node{p.value, Tensor(), nullptr, true});
  int id = static_cast<int>(nodes_.size() - 1);
  leaves_.emplace_back(id, &p);
  return Var(this, id);
}

Var Tape::push(Tensor v, std::initializer_list<Var> inputs, BackFn back) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || requires_grad(in.id());
  nodes_.push_back(Node{std::move(v), Tensor(), needs ? std::move(back) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Tensor v, const std::vector<Var>& inputs, BackFn back) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || requires_grad(in.id());
  nodes_.push_back(Node{std::move(v), Tensor(), needs ? std::move(back) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var root) {
  require(root.tape() == this, "backward: root belongs to another tape");
  const auto& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractViolation("backward: root must be scalar, got " + std::to_string(rv.rows()) +
                            "x" + std::to_string(rv.cols()));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(root.id(), Tensor::Ones(1, 1));
  for (int i = root.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.back && n.grad.size() != 0) n.back(*this, i);
  }
  for (auto& [id, p] : leaves_) {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    if (g.size() == 0) continue;
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    p->grad += g;
  }
}

namespace {

enum class Bcast { kSame, kRow, kScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::kScalar;
  throw DimensionError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()) + " do not broadcast");
}

Tensor expand(const Tensor& b, Bcast k, Eigen::Index rows, Eigen::Index cols) {
  switch (k) {
    case Bcast::kSame:
      return b;
    case Bcast::kRow:
      return b.replicate(rows, 1);
    case Bcast::kScalar:
      return Tensor::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Tensor reduce(const Tensor& g, Bcast k) {
  switch (k) {
    case Bcast::kSame:
      return g;
    case Bcast::kRow:
      return g.colwise().sum();
    case Bcast::kScalar:
      return Tensor::Constant(1, 1, g.sum());
  }
  return g;
}

Tape& same_tape(Var a, Var b) {
  require(a.tape() == b.tape(), "operands recorded on different tapes");
  return *a.tape();
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto k = broadcast_kind(a.value(), b.value(), "add");
  Tensor v = a.value() + expand(b.value(), k, a.rows(), a.cols());
  int ia = a.id(), ib = b.id();
  return t.push(std::move(v), {a, b}, [ia, ib, k](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce(g, k));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto k = broadcast_kind(a.value(), b.value(), "sub");
  Tensor v = a.value() - expand(b.value(), k, a.rows(), a.cols());
  int ia = a.id(), ib = b.id();
  return t.push(std::move(v), {a, b}, [ia, ib, k](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -reduce(g, k));
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto k = broadcast_kind(a.value(), b.value(), "mul");
  Tensor bx = expand(b.value(), k, a.rows(), a.cols());
  Tensor v = a.value().cwiseProduct(bx);
  int ia = a.id(), ib = b.id();
  return t.push(std::move(v), {a, b}, [ia, ib, k](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia);
    const auto& bv = tp.value(ib);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(expand(bv, k, av.rows(), av.cols())));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce(g.cwiseProduct(av), k));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  int ia = a.id();
  return a.tape()->push(a.value() * s, {a},
                        [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self) * s); });
}

Var add_scalar(Var a, double s) {
  int ia = a.id();
  Tensor v = a.value().array() + s;
  return a.tape()->push(std::move(v), {a},
                        [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self)); });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_dims(a.cols() == b.rows(), "matmul: inner dimensions " + std::to_string(a.cols()) +
                                         " vs " + std::to_string(b.rows()));
  Tensor v = a.value() * b.value();
  int ia = a.id(), ib = b.id();
  return t.push(std::move(v), {a, b}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_dims(a.cols() == b.cols(), "matmul_nt: inner dimensions " + std::to_string(a.cols()) +
                                         " vs " + std::to_string(b.cols()));
  Tensor v = a.value() * b.value().transpose();
  int ia = a.id(), ib = b.id();
  return t.push(std::move(v), {a, b}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
  });
}

Var linear(Var x, Var w, Var b) {
  Tape& t = same_tape(x, w);
  require(b.tape() == &t, "linear: bias on another tape");
  require_dims(x.cols() == w.cols(), "linear: input dim " + std::to_string(x.cols()) +
                                         " but weight expects " + std::to_string(w.cols()));
  require_dims(b.rows() == 1 && b.cols() == w.rows(), "linear: bias shape mismatch");
  Tensor v = x.value() * w.value().transpose();
  v.rowwise() += b.value().row(0);
  int ix = x.id(), iw = w.id(), ib = b.id();
  return t.push(std::move(v), {x, w, b}, [ix, iw, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ix)) tp.accumulate(ix, g * tp.value(iw));
    if (tp.requires_grad(iw)) tp.accumulate(iw, g.transpose() * tp.value(ix));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

Var transpose(Var a) {
  int ia = a.id();
  Tensor v = a.value().transpose();
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).transpose());
  });
}

Var tanh(Var a) {
  int ia = a.id();
  Tensor v = a.value().array().tanh();
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    const auto& y = tp.value(self);
    tp.accumulate(ia, (tp.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  int ia = a.id();
  Tensor v = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    const auto& y = tp.value(self);
    tp.accumulate(ia, (tp.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var elu(Var a) {
  int ia = a.id();
  Tensor v = a.value().unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    const auto& x = tp.value(ia);
    Tensor d = x.unaryExpr([](double u) { return u > 0 ? 1.0 : std::exp(u); });
    tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
  });
}

Var relu(Var a) {
  int ia = a.id();
  Tensor v = a.value().cwiseMax(0.0);
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    const auto& x = tp.value(ia);
    Tensor d = x.unaryExpr([](double u) { return u > 0 ? 1.0 : 0.0; });
    tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
  });
}

Var exp(Var a) {
  int ia = a.id();
  Tensor v = a.value().array().exp();
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var log(Var a) {
  int ia = a.id();
  Tensor v = a.value().array().log();
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).cwiseQuotient(tp.value(ia)));
  });
}

Var square(Var a) {
  int ia = a.id();
  Tensor v = a.value().array().square();
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, 2.0 * tp.grad(self).cwiseProduct(tp.value(ia)));
  });
}

Var clamp(Var a, double lo, double hi) {
  int ia = a.id();
  Tensor v = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->push(std::move(v), {a}, [ia, lo, hi](Tape& tp, int self) {
    const auto& x = tp.value(ia);
    Tensor d = x.unaryExpr([lo, hi](double u) { return (u >= lo && u <= hi) ? 1.0 : 0.0; });
    tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
  });
}

Var sum(Var a) {
  int ia = a.id();
  auto r = a.rows(), c = a.cols();
  return a.tape()->push(Tensor::Constant(1, 1, a.value().sum()), {a},
                        [ia, r, c](Tape& tp, int self) {
                          tp.accumulate(ia, Tensor::Constant(r, c, tp.grad(self)(0, 0)));
                        });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(Var a) {
  int ia = a.id();
  auto c = a.cols();
  Tensor v = a.value().rowwise().sum();
  return a.tape()->push(std::move(v), {a}, [ia, c](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).replicate(1, c));
  });
}

Var col_mean(Var a) {
  int ia = a.id();
  auto r = a.rows();
  Tensor v = a.value().colwise().mean();
  return a.tape()->push(std::move(v), {a}, [ia, r](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).replicate(r, 1) / static_cast<double>(r));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Tape& t = *parts.front().tape();
  auto rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_dims(p.rows() == rows, "concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor v(rows, total);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.cols();
  }
  return t.push(std::move(v), parts, [spans](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (const auto& [id, start] : spans) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleCols(start, tp.value(id).cols()));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = *parts.front().tape();
  auto cols = parts.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_dims(p.cols() == cols, "concat_rows: column count mismatch");
    total += p.rows();
  }
  Tensor v(total, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.rows();
  }
  return t.push(std::move(v), parts, [spans](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (const auto& [id, start] : spans) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleRows(start, tp.value(id).rows()));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  require_dims(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols out of range");
  int ia = a.id();
  auto r = a.rows(), c = a.cols();
  Tensor v = a.value().middleCols(start, n);
  return a.tape()->push(std::move(v), {a}, [ia, r, c, start, n](Tape& tp, int self) {
    Tensor g = Tensor::Zero(r, c);
    g.middleCols(start, n) = tp.grad(self);
    tp.accumulate(ia, g);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
  require_dims(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows out of range");
  int ia = a.id();
  auto r = a.rows(), c = a.cols();
  Tensor v = a.value().middleRows(start, n);
  return a.tape()->push(std::move(v), {a}, [ia, r, c, start, n](Tape& tp, int self) {
    Tensor g = Tensor::Zero(r, c);
    g.middleRows(start, n) = tp.grad(self);
    tp.accumulate(ia, g);
  });
}

Var tile_cols(Var a, Eigen::Index times) {
  require_dims(a.rows() == 1, "tile_cols expects a single row");
  require(times >= 1, "tile_cols: times must be >= 1");
  int ia = a.id();
  auto n = a.cols();
  Tensor v = a.value().replicate(1, times);
  return a.tape()->push(std::move(v), {a}, [ia, n, times](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    Tensor acc = Tensor::Zero(1, n);
    for (Eigen::Index k = 0; k < times; ++k) acc += g.middleCols(k * n, n);
    tp.accumulate(ia, acc);
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  require_dims(rows * cols == a.value().size(), "reshape: element count mismatch");
  int ia = a.id();
  auto r0 = a.rows(), c0 = a.cols();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Tensor v = Eigen::Map<RowMajor>(src.data(), rows, cols);
  return a.tape()->push(std::move(v), {a}, [ia, r0, c0](Tape& tp, int self) {
    RowMajor g = tp.grad(self);
    Tensor back = Eigen::Map<RowMajor>(g.data(), r0, c0);
    tp.accumulate(ia, back);
  });
}

Var select_rows(const std::vector<Var>& options, const std::vector<int>& choice) {
  require(!options.empty(), "select_rows: no options");
  Tape& t = *options.front().tape();
  auto r = options.front().rows(), c = options.front().cols();
  for (const auto& o : options) require_dims(o.rows() == r && o.cols() == c, "select_rows: shape mismatch");
  require_dims(static_cast<Eigen::Index>(choice.size()) == r, "select_rows: choice length mismatch");
  Tensor v(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    int k = choice[static_cast<size_t>(i)];
    require(k >= 0 && k < static_cast<int>(options.size()), "select_rows: choice out of range");
    v.row(i) = options[static_cast<size_t>(k)].value().row(i);
  }
  std::vector<int> ids;
  for (const auto& o : options) ids.push_back(o.id());
  return t.push(std::move(v), options, [ids, choice, r, c](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor gk = Tensor::Zero(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        if (choice[static_cast<size_t>(i)] == static_cast<int>(k)) gk.row(i) = g.row(i);
      }
      tp.accumulate(ids[k], gk);
    }
  });
}

Var softmax_rows(Var a) {
  int ia = a.id();
  Tensor v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, int self) {
    const auto& y = tp.value(self);
    const auto& g = tp.grad(self);
    Tensor dot = g.cwiseProduct(y).rowwise().sum();
    Tensor gx = y.cwiseProduct(g - dot.replicate(1, y.cols()));
    tp.accumulate(ia, gx);
  });
}

Var layer_norm_rows(Var a, double eps) {
  int ia = a.id();
  const auto& x = a.value();
  auto n = static_cast<double>(x.cols());
  Tensor mu = x.rowwise().mean();
  Tensor xc = x - mu.replicate(1, x.cols());
  Tensor var = xc.array().square().rowwise().sum() / n;
  Tensor inv = (var.array() + eps).rsqrt();
  Tensor v = xc.cwiseProduct(inv.replicate(1, x.cols()));
  return a.tape()->push(std::move(v), {a}, [ia, inv, n](Tape& tp, int self) {
    const auto& y = tp.value(self);
    const auto& g = tp.grad(self);
    auto cols = y.cols();
    Tensor gmean = g.rowwise().mean();
    Tensor gymean = g.cwiseProduct(y).rowwise().sum() / n;
    Tensor gx = (g - gmean.replicate(1, cols) - y.cwiseProduct(gymean.replicate(1, cols)))
                    .cwiseProduct(inv.replicate(1, cols));
    tp.accumulate(ia, gx);
  });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

}  // namespace girl::ad
