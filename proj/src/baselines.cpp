#include "dropmax/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "dropmax/batch.hpp"
#include "dropmax/dropmax.hpp"
#include "dropmax/error.hpp"

namespace dropmax {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::softmax: return "softmax";
    case ModelKind::sampled: return "sampled";
    case ModelKind::random_dropmax: return "random-dropmax";
    case ModelKind::det_attention: return "det-attention";
    case ModelKind::det_dropmax: return "det-dropmax";
    case ModelKind::dropmax: return "dropmax";
    case ModelKind::dropmax_qp: return "dropmax-qp";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  for (ModelKind k : {ModelKind::softmax, ModelKind::sampled, ModelKind::random_dropmax,
                      ModelKind::det_attention, ModelKind::det_dropmax, ModelKind::dropmax,
                      ModelKind::dropmax_qp}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown model kind '" + name + "'");
}

namespace {

bool on_grid(double v, const std::array<double, 3>& grid) {
  return std::any_of(grid.begin(), grid.end(), [v](double g) { return std::abs(v - g) < 1e-12; });
}

}  // namespace

void BaselineSpec::validate() const {
  constexpr std::array<double, 3> fractions{0.2, 0.4, 0.6};
  constexpr std::array<double, 3> gammas{1.0, 0.1, 0.01};
  if (kind == ModelKind::random_dropmax && !on_grid(retain, fractions)) {
    throw ConfigError("random-dropmax retain must be one of 0.2, 0.4, 0.6");
  }
  if (kind == ModelKind::sampled && !on_grid(fraction, fractions)) {
    throw ConfigError("sampled fraction must be one of 0.2, 0.4, 0.6");
  }
  if (kind == ModelKind::dropmax_qp && !on_grid(gamma, gammas)) {
    throw ConfigError("dropmax-qp gamma must be one of 1, 0.1, 0.01");
  }
}

Tensor softmax_loss(const Tensor& o, const Tensor& onehot) {
  Tensor log_probs = o - log_sum_exp(o, Axis::cols);
  return -reduce_sum(log_probs * onehot);
}

std::vector<int> sample_class_subset(std::size_t num_classes, int target, double fraction, Rng& rng) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("sampled fraction must lie in (0, 1]");
  const double expected = fraction * static_cast<double>(num_classes);
  if (expected < 1.0) throw ConfigError("sampled fraction selects fewer than one class");
  // The tolerance keeps products like 0.6 * 10 from rounding up to 7.
  const auto subset = static_cast<std::size_t>(std::ceil(expected - 1e-9));

  std::vector<int> others;
  others.reserve(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (static_cast<int>(k) != target) others.push_back(static_cast<int>(k));
  }
  // Partial Fisher-Yates: the first subset-1 entries are a uniform draw.
  for (std::size_t i = 0; i + 1 < subset; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(others.size() - i));
    std::swap(others[i], others[j]);
  }
  std::vector<int> chosen(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(subset - 1));
  chosen.push_back(target);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

Tensor sampled_softmax_loss(const Tensor& o, const std::vector<int>& targets, double fraction,
                            Rng& rng) {
  const std::size_t num_classes = o.cols();
  if (targets.size() != o.rows()) throw DimensionError("sampled_softmax_loss: target count");
  // Excluded classes get a large negative offset so that exp underflows to 0.
  constexpr double kExcluded = -1e4;
  Matrix offset = Matrix::Constant(o.value().rows(), o.value().cols(), kExcluded);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (int k : sample_class_subset(num_classes, targets[i], fraction, rng)) {
      offset(static_cast<Eigen::Index>(i), k) = 0.0;
    }
  }
  Tape& tape = *o.tape();
  return softmax_loss(o + tape.constant(std::move(offset)),
                      tape.constant(one_hot(targets, num_classes)));
}

Matrix random_dropmax_mask(const std::vector<int>& targets, std::size_t num_classes, double retain,
                           Rng& rng) {
  if (!(retain > 0.0) || retain > 1.0) throw ConfigError("retain probability must lie in (0, 1]");
  Matrix z(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      const bool keep = static_cast<int>(k) == targets[i] || rng.bernoulli(retain);
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = keep ? 1.0 : 0.0;
    }
  }
  return z;
}

Tensor random_dropmax_loss(const Tensor& o, const Tensor& onehot, const std::vector<int>& targets,
                           double retain, double epsilon, Rng& rng) {
  Tensor z = o.tape()->constant(random_dropmax_mask(targets, o.cols(), retain, rng));
  return -reduce_sum(dropmax_log_likelihood(o, z, onehot, epsilon).log_target);
}

Tensor attention(const Tensor& h, Linear& attention_head) {
  return sigmoid(attention_head.forward(*h.tape(), h));
}

Tensor attention_log_probs(const Tensor& o, const Tensor& attention_logits) {
  // log a = -softplus(-logit)
  Tensor scores = o - softplus(-attention_logits);
  return scores - log_sum_exp(scores, Axis::cols);
}

Tensor deterministic_attention_loss(const Tensor& o, const Tensor& attention_logits,
                                    const Tensor& onehot) {
  return -reduce_sum(attention_log_probs(o, attention_logits) * onehot);
}

Tensor deterministic_dropmax_loss(const Tensor& o, const Tensor& attention_logits,
                                  const Tensor& onehot) {
  return deterministic_attention_loss(o, attention_logits, onehot) + aux_loss(attention_logits, onehot);
}

}  // namespace dropmax
