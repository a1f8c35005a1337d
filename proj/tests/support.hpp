#pragma once

// Shared generators and checks for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/rng.hpp"

namespace dropmax::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
  return m;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Matrix row(const std::vector<double>& v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// Max relative error between tape gradients and central differences of `f`
/// with respect to every input.
inline double fd_max_rel_error(const ScalarFn& f, std::vector<Matrix> inputs, double step = 1e-5) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const Tensor out = f(tape, vars);
  tape.backward(out);
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Tensor> v;
    for (const auto& m : xs) v.push_back(t.constant(m));
    return f(t, v).item();
  };
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Matrix analytic = vars[a].grad();
    for (Eigen::Index i = 0; i < inputs[a].size(); ++i) {
      const double saved = inputs[a].data()[i];
      inputs[a].data()[i] = saved + step;
      const double plus = eval(inputs);
      inputs[a].data()[i] = saved - step;
      const double minus = eval(inputs);
      inputs[a].data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double an = analytic.data()[i];
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(an - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dropmax::testing
