#pragma once

// Define-by-run reverse-mode automatic differentiation over dense 64-bit
// matrices. A Tape is built for one forward evaluation (one batch), then
// `backward` is called once on a scalar loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dropmax/rng.hpp"

namespace dropmax {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Extents of a rank-2 tensor. Scalars are 1x1, vectors are 1xn rows.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::vector<std::size_t> extents() const { return {rows, cols}; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Parameter groups of a classifier. Weight decay and gradient reports are
/// keyed on these.
enum class ParamGroup { omega, psi, theta, phi };

const char* to_string(ParamGroup g);

/// A trainable array that outlives tapes. `grad` accumulates across
/// `Tape::backward` calls until `zero_grad`.
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::omega;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, ParamGroup group, Matrix value);

  Shape shape() const {
    return {static_cast<std::size_t>(value.rows()), static_cast<std::size_t>(value.cols())};
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Gradient of the last backward pass; zeros when unreachable.
  const Matrix& grad() const;
  Shape shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;
  bool defined() const { return tape_ != nullptr; }
  /// Value of a 1x1 tensor.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient flowing into a node and routes it to the
  /// node's parents via `Tape::accumulate`.
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(std::uint64_t seed = 0) : rng_(seed) {}
  explicit Tape(Rng rng) : rng_(std::move(rng)) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Tensor constant(Matrix value);
  /// Leaf that receives gradient (read it back through Tensor::grad).
  Tensor variable(Matrix value);
  /// Leaf bound to a persistent parameter; backward adds into `p.grad`.
  Tensor parameter(Parameter& p);

  /// Records an interior node. Parents that do not require gradient are
  /// never visited by `backward_fn`; if none requires it the node is a
  /// constant.
  Tensor record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward_fn);

  /// Reverse sweep from a scalar loss.
  void backward(const Tensor& loss);

  /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  Rng& rng() { return rng_; }

  /// Values produced by stop_gradient on this tape, in call order.
  const std::vector<Matrix>& stopped_values() const { return stopped_; }
  /// Makes the i-th stop_gradient call return `values[i]` instead of its
  /// input, so a finite-difference probe sees those nodes as constants.
  void replay_stopped(std::vector<Matrix> values) { replay_ = std::move(values); }

 private:
  friend Tensor stop_gradient(const Tensor& x);

  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward_fn;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tensor push(Node node);

  std::vector<Node> nodes_;
  Rng rng_;
  Matrix empty_;
  std::vector<Matrix> stopped_;
  std::vector<Matrix> replay_;
};

/// Reduction axis: `rows` collapses the batch dimension (m x n -> 1 x n),
/// `cols` collapses the feature dimension (m x n -> m x 1).
enum class Axis { all, rows, cols };

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise binary ops. Operands broadcast when one side is 1x1, 1xn or mx1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double c);
/// c - x
Tensor rsub_scalar(double c, const Tensor& x);

// Elementwise unary ops.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// 1/(1+e^-x), branch on sign so |x| up to the double range is safe.
Tensor sigmoid(const Tensor& x);
/// log(1+e^x) without overflow.
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions.
Tensor reduce_sum(const Tensor& x, Axis axis = Axis::all);
Tensor reduce_mean(const Tensor& x, Axis axis = Axis::all);
/// Max-shifted log-sum-exp.
Tensor log_sum_exp(const Tensor& x, Axis axis);

/// Forward identity, contributes nothing to the input's gradient.
Tensor stop_gradient(const Tensor& x);

/// I.i.d. Unif(0,1) draws clamped to [1e-7, 1-1e-7], recorded as a constant.
Tensor sample_uniform(Tape& tape, Shape shape, Rng& rng);

inline constexpr double kUniformClamp = 1e-7;

}  // namespace dropmax
