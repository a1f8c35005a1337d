#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/baselines.hpp"
#include "dropmax/batch.hpp"
#include "dropmax/dropmax.hpp"
#include "dropmax/layers.hpp"

namespace dropmax {

/// Test-time predictor for the stochastic heads. `mean` substitutes rho for
/// the mask; `mc` averages relaxed mask samples. Other heads ignore it.
enum class Predictor { mean, mc };

struct ModelSpec {
  ModelKind kind = ModelKind::dropmax;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  DropMaxConfig dropmax;
  double retain = 0.4;
  double fraction = 0.4;

  BaselineSpec baseline() const { return {kind, retain, fraction, dropmax.gamma}; }
  void validate() const;
};

struct Prediction {
  Matrix probs;
  /// Retain probabilities (DropMax heads) or attention weights (attention
  /// heads). Empty for heads without one.
  Matrix retain;
};

/// Extractor plus the head selected by `ModelSpec::kind`.
class Classifier {
 public:
  Classifier(ModelSpec spec, std::size_t input_dim, std::size_t num_classes, std::uint64_t seed);

  /// Training loss summed over the batch.
  Tensor loss(Tape& tape, const LabeledBatch& batch, Rng& noise);

  /// Deterministic unless `predictor` is `mc` on a DropMax head.
  Prediction predict(const Matrix& x, Predictor predictor, int samples, Rng& noise);

  /// Parameters the selected head actually uses, extractor first.
  std::vector<Parameter*> parameters();
  void zero_grad();

  const ModelSpec& spec() const { return spec_; }
  std::size_t input_dim() const { return extractor_.input_dim(); }
  std::size_t num_classes() const { return head_.num_classes(); }
  Mlp& extractor() { return extractor_; }
  DropMaxHead& head() { return head_; }

 private:
  ModelSpec spec_;
  Mlp extractor_;
  DropMaxHead head_;
};

}  // namespace dropmax
