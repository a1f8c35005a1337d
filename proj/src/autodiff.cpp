#include "dropmax/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dropmax/error.hpp"

namespace dropmax {

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::omega: return "omega";
    case ParamGroup::psi: return "psi";
    case ParamGroup::theta: return "theta";
    case ParamGroup::phi: return "phi";
  }
  return "?";
}

Parameter::Parameter(std::string n, ParamGroup g, Matrix v)
    : name(std::move(n)), group(g), value(std::move(v)) {
  zero_grad();
}

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

Shape Tensor::shape() const {
  const Matrix& v = value();
  return {static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(v.cols())};
}

double Tensor::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("item() on non-scalar tensor " + to_string(shape()));
  }
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Tensor Tape::record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward_fn = std::move(backward_fn);
  }
  return push(std::move(n));
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.grad.size() == n.value.size() ? n.grad : empty_;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw DimensionError("gradient shape mismatch at node " + std::to_string(id));
  }
  n.grad += g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("backward: tensor belongs to another tape");
  const Shape s = loss.shape();
  if (s.rows != 1 || s.cols != 1) {
    throw ContractError("backward: loss must be scalar, got " + to_string(s));
  }
  for (Node& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad(0, 0) = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward_fn) continue;
    n.backward_fn(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr) continue;
    if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
      n.param->zero_grad();
    }
    n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

Shape shape_of(const Matrix& m) {
  return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

std::size_t broadcast_extent(std::size_t a, std::size_t b, const Shape& sa, const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw DimensionError("cannot broadcast " + to_string(sa) + " with " + to_string(sb));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  return {broadcast_extent(a.rows, b.rows, a, b), broadcast_extent(a.cols, b.cols, a, b)};
}

Matrix expand(const Matrix& m, const Shape& to) {
  const auto r = static_cast<Eigen::Index>(to.rows);
  const auto c = static_cast<Eigen::Index>(to.cols);
  if (m.rows() == r && m.cols() == c) return m;
  return m.replicate(r / m.rows(), c / m.cols());
}

/// Sums a broadcast gradient back down to `to`.
Matrix reduce_to(const Matrix& g, const Shape& to) {
  Matrix out = g;
  if (to.rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (to.cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const Tensor& a, const Tensor& b, Forward fwd, GradA ga, GradB gb) {
  Tape* tape = a.tape();
  if (tape != b.tape()) throw ContractError("operands belong to different tapes");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const Shape out = broadcast_shape(sa, sb);
  Matrix av = expand(a.value(), out);
  Matrix bv = expand(b.value(), out);
  Matrix value = fwd(av, bv);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape->record(std::move(value), {ia, ib},
                      [ia, ib, sa, sb, out, ga, gb](Tape& t, const Matrix& g) {
                        const bool need_a = t.requires_grad(ia);
                        const bool need_b = t.requires_grad(ib);
                        if (!need_a && !need_b) return;
                        Matrix av = expand(t.value(ia), out);
                        Matrix bv = expand(t.value(ib), out);
                        if (need_a) t.accumulate(ia, reduce_to(ga(g, av, bv), sa));
                        if (need_b) t.accumulate(ib, reduce_to(gb(g, av, bv), sb));
                      });
}

template <typename Forward, typename Local>
Tensor unary(const Tensor& x, Forward fwd, Local local_grad) {
  Matrix value = fwd(x.value());
  const std::size_t ix = x.id();
  const std::size_t out_id = x.tape()->size();
  return x.tape()->record(std::move(value), {ix},
                          [ix, out_id, local_grad](Tape& t, const Matrix& g) {
                            t.accumulate(ix, local_grad(g, t.value(ix), t.value(out_id)));
                          });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw ContractError("operands belong to different tapes");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Matrix value(a.value().rows(), b.value().cols());
  value.noalias() = a.value() * b.value();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape()->record(std::move(value), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix ga(g.rows(), t.value(ia).cols());
      ga.noalias() = g * t.value(ib).transpose();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Matrix gb(t.value(ia).cols(), g.cols());
      gb.noalias() = t.value(ia).transpose() * g;
      t.accumulate(ib, gb);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); },
      [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.cwiseProduct(x); });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseQuotient(y); },
      [](const Matrix& g, const Matrix& x, const Matrix& y) -> Matrix {
        return (-g.cwiseProduct(x)).cwiseQuotient(y.cwiseProduct(y));
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](const Matrix& v) -> Matrix { return v * factor; },
      [factor](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g * factor; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, [c](const Matrix& v) -> Matrix { return v.array() + c; },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Tensor rsub_scalar(double c, const Tensor& x) {
  return unary(
      x, [c](const Matrix& v) -> Matrix { return c - v.array(); },
      [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](const Matrix& v) -> Matrix { return v.array().exp(); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](const Matrix& v) -> Matrix { return v.array().log(); },
      [](const Matrix& g, const Matrix& v, const Matrix&) -> Matrix { return g.cwiseQuotient(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](const Matrix& v) -> Matrix { return v.unaryExpr(&stable_sigmoid); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix {
        return g.array() * y.array() * (1.0 - y.array());
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x,
      [](const Matrix& v) -> Matrix {
        return v.unaryExpr([](double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); });
      },
      [](const Matrix& g, const Matrix& v, const Matrix&) -> Matrix {
        return g.cwiseProduct(v.unaryExpr(&stable_sigmoid));
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](const Matrix& v) -> Matrix { return v.cwiseMax(0.0); },
      [](const Matrix& g, const Matrix& v, const Matrix&) -> Matrix {
        return (v.array() > 0.0).select(g, 0.0);
      });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](const Matrix& v) -> Matrix { return v.array().tanh(); },
      [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix {
        return g.array() * (1.0 - y.array().square());
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](const Matrix& v) -> Matrix { return v.cwiseMax(lo).cwiseMin(hi); },
      [lo, hi](const Matrix& g, const Matrix& v, const Matrix&) -> Matrix {
        return (v.array() >= lo && v.array() <= hi).select(g, 0.0);
      });
}

Tensor reduce_sum(const Tensor& x, Axis axis) {
  const Matrix& v = x.value();
  Matrix value;
  switch (axis) {
    case Axis::all: value = Matrix::Constant(1, 1, v.sum()); break;
    case Axis::rows: value = v.colwise().sum(); break;
    case Axis::cols: value = v.rowwise().sum(); break;
  }
  const std::size_t ix = x.id();
  const Shape in = x.shape();
  return x.tape()->record(std::move(value), {ix}, [ix, in](Tape& t, const Matrix& g) {
    t.accumulate(ix, expand(g, in));
  });
}

Tensor reduce_mean(const Tensor& x, Axis axis) {
  const Shape s = x.shape();
  std::size_t n = s.size();
  if (axis == Axis::rows) n = s.rows;
  if (axis == Axis::cols) n = s.cols;
  return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(n));
}

Tensor log_sum_exp(const Tensor& x, Axis axis) {
  const Matrix& v = x.value();
  auto shift_of = [](double m) { return std::isfinite(m) ? m : 0.0; };
  Matrix value;
  switch (axis) {
    case Axis::all: {
      const double m = shift_of(v.maxCoeff());
      value = Matrix::Constant(1, 1, m + std::log((v.array() - m).exp().sum()));
      break;
    }
    case Axis::cols: {
      value.resize(v.rows(), 1);
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double m = shift_of(v.row(i).maxCoeff());
        value(i, 0) = m + std::log((v.row(i).array() - m).exp().sum());
      }
      break;
    }
    case Axis::rows: {
      value.resize(1, v.cols());
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double m = shift_of(v.col(j).maxCoeff());
        value(0, j) = m + std::log((v.col(j).array() - m).exp().sum());
      }
      break;
    }
  }
  const std::size_t ix = x.id();
  const std::size_t out_id = x.tape()->size();
  const Shape in = x.shape();
  return x.tape()->record(std::move(value), {ix}, [ix, out_id, in](Tape& t, const Matrix& g) {
    Matrix lse = expand(t.value(out_id), in);
    Matrix w = (t.value(ix) - lse).array().exp();
    t.accumulate(ix, expand(g, in).cwiseProduct(w));
  });
}

Tensor stop_gradient(const Tensor& x) {
  Tape& tape = *x.tape();
  const std::size_t i = tape.stopped_.size();
  Matrix v = i < tape.replay_.size() ? tape.replay_[i] : x.value();
  if (v.rows() != x.value().rows() || v.cols() != x.value().cols()) {
    throw DimensionError("replayed stop_gradient value has the wrong shape");
  }
  tape.stopped_.push_back(v);
  return tape.constant(std::move(v));
}

Tensor sample_uniform(Tape& tape, Shape shape, Rng& rng) {
  Matrix u(static_cast<Eigen::Index>(shape.rows), static_cast<Eigen::Index>(shape.cols));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u.data()[i] = std::clamp(rng.uniform(), kUniformClamp, 1.0 - kUniformClamp);
  }
  return tape.constant(std::move(u));
}

}  // namespace dropmax
