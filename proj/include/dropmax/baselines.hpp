#pragma once

// Comparison heads sharing the extractor and harness with DropMax.

#include <cstddef>
#include <string>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/layers.hpp"
#include "dropmax/rng.hpp"

namespace dropmax {

enum class ModelKind {
  softmax,
  sampled,
  random_dropmax,
  det_attention,
  det_dropmax,
  dropmax,
  dropmax_qp,
};

/// CLI spelling: softmax, sampled, random-dropmax, det-attention, det-dropmax,
/// dropmax, dropmax-qp.
std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct BaselineSpec {
  ModelKind kind = ModelKind::softmax;
  /// Fixed retain probability for random DropMax.
  double retain = 0.4;
  /// Sampled fraction of classes for sampled softmax.
  double fraction = 0.4;
  /// Entropy scale for DropMax(q=p).
  double gamma = 1.0;

  /// Throws ConfigError unless each hyperparameter used by `kind` lies on its
  /// grid: retain, fraction in {0.2, 0.4, 0.6}; gamma in {1, 0.1, 0.01}.
  void validate() const;
};

/// Summed cross-entropy of the full softmax.
Tensor softmax_loss(const Tensor& o, const Tensor& onehot);

/// Target plus ceil(f K) - 1 distinct non-targets drawn uniformly without
/// replacement, in ascending order. Throws ConfigError when f K < 1.
std::vector<int> sample_class_subset(std::size_t num_classes, int target, double fraction, Rng& rng);

/// Cross-entropy restricted to one sampled class subset per instance.
Tensor sampled_softmax_loss(const Tensor& o, const std::vector<int>& targets, double fraction,
                            Rng& rng);

/// Hard Ber(retain) masks on non-targets, target mask fixed to 1.
Matrix random_dropmax_mask(const std::vector<int>& targets, std::size_t num_classes, double retain,
                           Rng& rng);

/// Summed masked-likelihood loss under freshly drawn random masks.
Tensor random_dropmax_loss(const Tensor& o, const Tensor& onehot, const std::vector<int>& targets,
                           double retain, double epsilon, Rng& rng);

/// a = sigmoid(h W + b).
Tensor attention(const Tensor& h, Linear& attention_head);

/// log of a_k e^{o_k} / sum_j a_j e^{o_j}, B x K.
Tensor attention_log_probs(const Tensor& o, const Tensor& attention_logits);

/// Summed cross-entropy of the attention-weighted softmax.
Tensor deterministic_attention_loss(const Tensor& o, const Tensor& attention_logits,
                                    const Tensor& onehot);

/// deterministic_attention_loss plus binary cross-entropy of the attention
/// against the labels (unit weight).
Tensor deterministic_dropmax_loss(const Tensor& o, const Tensor& attention_logits,
                                  const Tensor& onehot);

}  // namespace dropmax
