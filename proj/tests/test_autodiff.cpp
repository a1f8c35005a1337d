#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dropmax/autodiff.hpp"
#include "dropmax/error.hpp"
#include "support.hpp"

using namespace dropmax;
using dropmax::testing::fd_max_rel_error;
using dropmax::testing::random_matrix;

namespace {

Matrix m22(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace

TEST(Matmul, IdentityAndSelection) {
  Tape tape;
  const Matrix x = m22(1, 2, 3, 4);
  EXPECT_EQ(matmul(tape.constant(Matrix::Identity(2, 2)), tape.constant(x)).value(), x);
  Matrix a(1, 2);
  a << 1, 0;
  Matrix b(2, 1);
  b << 2, 5;
  EXPECT_DOUBLE_EQ(matmul(tape.constant(a), tape.constant(b)).item(), 2.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Matrix::Zero(2, 3)), tape.constant(Matrix::Zero(2, 3))),
               DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const double err = fd_max_rel_error(
      [](Tape&, const std::vector<Tensor>& v) { return reduce_sum(tanh(matmul(v[0], v[1]))); },
      {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)});
  EXPECT_LT(err, 1e-6);
}

TEST(Sigmoid, SymmetrySaturationAndSlope) {
  Tape tape;
  Tensor x = tape.variable(Matrix::Zero(1, 1));
  Tensor y = sigmoid(x);
  EXPECT_DOUBLE_EQ(y.item(), 0.5);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.25);
  EXPECT_EQ(sigmoid(tape.constant(Matrix::Constant(1, 1, 700.0))).item(), 1.0);
  EXPECT_LT(sigmoid(tape.constant(Matrix::Constant(1, 1, -700.0))).item(), 1e-300);
}

TEST(LogSumExp, ClosedForms) {
  Tape tape;
  Matrix v(1, 2);
  v << 0, 0;
  EXPECT_NEAR(log_sum_exp(tape.constant(v), Axis::cols).item(), std::numbers::ln2, 1e-15);
  v << 1000, 1000;
  EXPECT_NEAR(log_sum_exp(tape.constant(v), Axis::cols).item(), 1000 + std::numbers::ln2, 1e-12);
  EXPECT_DOUBLE_EQ(log_sum_exp(tape.constant(Matrix::Constant(1, 1, -3.5)), Axis::cols).item(), -3.5);
}

TEST(LogSumExp, RowReductionShape) {
  Tape tape;
  const Tensor r = log_sum_exp(tape.constant(Matrix::Zero(3, 4)), Axis::rows);
  EXPECT_EQ(r.shape(), (Shape{1, 4}));
  EXPECT_NEAR(r.value()(0, 2), std::log(3.0), 1e-15);
}

TEST(StopGradient, ForwardIsIdentity) {
  Tape tape;
  Matrix v(1, 3);
  v << 1, 2, 3;
  EXPECT_EQ(stop_gradient(tape.variable(v)).value(), v);
}

TEST(StopGradient, FreezesOneFactor) {
  Tape tape;
  Tensor x = tape.variable(Matrix::Constant(1, 1, 2.0));
  tape.backward(reduce_sum(stop_gradient(x) * x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 2.0);
}

TEST(StopGradient, FullyDetached) {
  Tape tape;
  Tensor x = tape.variable(Matrix::Constant(1, 4, 1.5));
  Tensor loss = reduce_sum(stop_gradient(x));
  tape.backward(loss);
  EXPECT_FALSE(loss.requires_grad());
  EXPECT_EQ(x.grad(), Matrix::Zero(1, 4));
}

TEST(StopGradient, ReplayHoldsValues) {
  Tape first;
  stop_gradient(first.variable(Matrix::Constant(1, 2, 3.0)));
  Tape second;
  second.replay_stopped(first.stopped_values());
  EXPECT_EQ(stop_gradient(second.variable(Matrix::Constant(1, 2, 9.0))).value(), Matrix::Constant(1, 2, 3.0));
}

TEST(StopGradient, TransparentToValues) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(rng, 3, 4, -2, 2);
    Tape tape;
    Tensor a = tape.variable(x);
    const double plain = reduce_sum(exp(tanh(a) * sigmoid(a))).item();
    const double wrapped = reduce_sum(exp(stop_gradient(tanh(a)) * sigmoid(a))).item();
    EXPECT_EQ(plain, wrapped);
  }
}

TEST(SampleUniform, DeterministicClampedAndCentered) {
  Rng a(11);
  Rng b(11);
  Tape t1;
  Tape t2;
  EXPECT_EQ(sample_uniform(t1, {4, 5}, a).value(), sample_uniform(t2, {4, 5}, b).value());

  Rng rng(12);
  Tape tape;
  const Matrix u = sample_uniform(tape, {1000, 1000}, rng).value();
  EXPECT_GE(u.minCoeff(), kUniformClamp);
  EXPECT_LE(u.maxCoeff(), 1.0 - kUniformClamp);
  EXPECT_NEAR(u.mean(), 0.5, 0.002);
}

TEST(Backward, PolynomialAndChainRule) {
  Tape tape;
  Tensor x = tape.variable(Matrix::Constant(1, 1, 3.0));
  tape.backward(x * x);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);

  Tape t2;
  Tensor w = t2.variable(Matrix::Zero(1, 1));
  Tensor one = t2.constant(Matrix::Constant(1, 1, 1.0));
  t2.backward(sigmoid(w * one));
  EXPECT_DOUBLE_EQ(w.grad()(0, 0), 0.25);
}

TEST(Backward, NonScalarLossThrows) {
  Tape tape;
  Tensor x = tape.variable(Matrix::Zero(2, 2));
  EXPECT_THROW(tape.backward(x * x), ContractError);
}

TEST(Backward, ParameterGradientsAccumulateUntilZeroed) {
  Parameter p("w", ParamGroup::psi, Matrix::Constant(1, 1, 2.0));
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Tensor w = tape.parameter(p);
    tape.backward(w * w);
  }
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 8.0);
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 0.0);
}

TEST(Broadcast, RowColumnAndScalar) {
  Tape tape;
  Matrix rowv(1, 2);
  rowv << 10, 20;
  Matrix col(2, 1);
  col << 1, 2;
  const Matrix sum = (tape.constant(Matrix::Zero(2, 2)) + tape.constant(rowv) + tape.constant(col)).value();
  EXPECT_EQ(sum, m22(11, 21, 12, 22));
  EXPECT_THROW(tape.constant(Matrix::Zero(2, 3)) + tape.constant(Matrix::Zero(3, 2)), DimensionError);
}

TEST(Clamp, PassesGradientInsideAndAtBounds) {
  Tape tape;
  Matrix v(1, 4);
  v << -2, -1, 0.5, 3;
  Tensor x = tape.variable(v);
  tape.backward(reduce_sum(clamp(x, -1.0, 1.0)));
  Matrix expected(1, 4);
  expected << 0, 1, 1, 0;
  EXPECT_EQ(x.grad(), expected);
}

// Every differentiable op against central differences on random points.
TEST(FiniteDifferenceProperty, ElementwiseAndReductionOps) {
  using V = std::vector<Tensor>;
  const std::vector<std::pair<const char*, dropmax::testing::ScalarFn>> ops = {
      {"add", [](Tape&, const V& v) { return reduce_sum(tanh(v[0] + v[1])); }},
      {"sub", [](Tape&, const V& v) { return reduce_sum(tanh(v[0] - v[1])); }},
      {"mul", [](Tape&, const V& v) { return reduce_sum(v[0] * v[1]); }},
      {"div", [](Tape&, const V& v) { return reduce_sum(v[0] / add_scalar(exp(v[1]), 0.5)); }},
      {"broadcast row", [](Tape&, const V& v) { return reduce_sum(tanh(v[0] * reduce_mean(v[1], Axis::rows))); }},
      {"broadcast col", [](Tape&, const V& v) { return reduce_sum(tanh(v[0] - reduce_sum(v[1], Axis::cols))); }},
      {"neg scale", [](Tape&, const V& v) { return reduce_sum(scale(-v[0], 1.7) * v[1]); }},
      {"rsub", [](Tape&, const V& v) { return reduce_sum(rsub_scalar(2.0, v[0]) * v[1]); }},
      {"exp log", [](Tape&, const V& v) { return reduce_sum(log(add_scalar(exp(v[0]), 1.0)) * v[1]); }},
      {"sigmoid", [](Tape&, const V& v) { return reduce_sum(sigmoid(v[0]) * v[1]); }},
      {"softplus", [](Tape&, const V& v) { return reduce_sum(softplus(v[0]) * v[1]); }},
      {"tanh", [](Tape&, const V& v) { return reduce_mean(tanh(v[0] * v[1])); }},
      {"lse cols", [](Tape&, const V& v) { return reduce_sum(log_sum_exp(v[0] * v[1], Axis::cols)); }},
      {"lse rows", [](Tape&, const V& v) { return reduce_sum(log_sum_exp(v[0] + v[1], Axis::rows)); }},
  };
  Rng rng(2024);
  for (const auto& [name, fn] : ops) {
    for (int trial = 0; trial < 100; ++trial) {
      const Eigen::Index rows = 1 + static_cast<Eigen::Index>(rng.below(3));
      const Eigen::Index cols = 1 + static_cast<Eigen::Index>(rng.below(4));
      const double err = fd_max_rel_error(fn, {random_matrix(rng, rows, cols, -2, 2), random_matrix(rng, rows, cols, -2, 2)});
      ASSERT_LT(err, 1e-5) << name << " trial " << trial;
    }
  }
}

TEST(FiniteDifferenceProperty, ReluAwayFromKink) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix x = random_matrix(rng, 2, 3, 0.1, 2.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (rng.bernoulli(0.5)) x.data()[i] = -x.data()[i];
    }
    const double err = fd_max_rel_error(
        [](Tape&, const std::vector<Tensor>& v) { return reduce_sum(relu(v[0]) * relu(v[0])); }, {x});
    ASSERT_LT(err, 1e-5);
  }
}

TEST(Determinism, LossTrajectoryOverTenSteps) {
  auto run = [] {
    Rng rng(3);
    Parameter w("w", ParamGroup::psi, random_matrix(rng, 4, 3));
    const Matrix x = random_matrix(rng, 5, 4);
    std::vector<double> losses;
    for (int step = 0; step < 10; ++step) {
      w.zero_grad();
      Tape tape;
      Rng noise = Rng::derive(3, Stream::noise, static_cast<std::uint64_t>(step));
      Tensor u = sample_uniform(tape, {5, 3}, noise);
      Tensor loss = reduce_sum(log_sum_exp(matmul(tape.constant(x), tape.parameter(w)) * u, Axis::cols));
      tape.backward(loss);
      w.value -= 0.1 * w.grad;
      losses.push_back(loss.item());
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}
