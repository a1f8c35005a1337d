#include "dropmax/batch.hpp"

#include "dropmax/error.hpp"

namespace dropmax {

Matrix one_hot(const std::vector<int>& targets, std::size_t num_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(targets.size()),
                          static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes) {
      throw ContractError("target " + std::to_string(t) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
    y(static_cast<Eigen::Index>(i), t) = 1.0;
  }
  return y;
}

Matrix LabeledBatch::onehot() const { return one_hot(targets, num_classes); }

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < m.cols(); ++k) {
      if (m(i, k) > m(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace dropmax
