#pragma once

#include <cstddef>
#include <vector>

#include "dropmax/autodiff.hpp"

namespace dropmax {

/// Features plus integer targets. One-hot rows are derived on demand.
struct LabeledBatch {
  Matrix x;
  std::vector<int> targets;
  std::size_t num_classes = 0;

  std::size_t size() const { return targets.size(); }
  Matrix onehot() const;
};

Matrix one_hot(const std::vector<int>& targets, std::size_t num_classes);

/// Row-wise argmax, ties resolved to the lowest class index.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace dropmax
