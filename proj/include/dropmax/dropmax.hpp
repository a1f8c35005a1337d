#pragma once

// The DropMax head: a softmax classifier whose exponentiated logits are
// multiplied by per-class retain masks z_k ~ Ber(rho_k(x)). The retain
// probabilities come from a sigmoid network over the shared feature vector h.
// Training maximizes a variational lower bound with a label-aware approximate
// posterior q(z|x,y) whose target coordinate is fixed to 1 and whose
// off-target gates are g = sigmoid(stop_grad(theta-logits) + r(x; phi)).
//
// Batch conventions: h is B x d_h, logits and masks are B x K, per-instance
// quantities are B x 1, and `onehot` is the B x K label matrix.

#include <cstddef>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/layers.hpp"
#include "dropmax/rng.hpp"

namespace dropmax {

/// Logits are clamped to this magnitude before any exponentiation.
inline constexpr double kLogitClamp = 30.0;
/// rho and g are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

/// How the entropy regularizer enters the objective. `literal` subtracts
/// H = sum rho log rho + (1-rho) log(1-rho), which penalizes high-entropy
/// retain probabilities; `flipped` adds it instead.
enum class EntropySign { literal, flipped };

/// `q_equals_p` shares the posterior with the prior (except q_t = 1), drops
/// the auxiliary loss and scales H by gamma.
enum class Variant { dropmax, q_equals_p };

struct DropMaxConfig {
  double epsilon = 1e-20;
  double tau = 0.1;
  int train_samples = 1;
  int test_samples = 100;
  EntropySign entropy_sign = EntropySign::literal;
  Variant variant = Variant::dropmax;
  double gamma = 1.0;

  /// Throws ConfigError unless epsilon > 0, tau > 0 and both sample counts >= 1.
  void validate() const;
};

/// psi (class logits), theta (retain probabilities) and phi (posterior
/// rescaling), all reading the same feature vector.
struct DropMaxHead {
  Linear psi;
  Linear theta;
  Linear phi;

  static DropMaxHead init(std::size_t feature_width, std::size_t num_classes, Rng& rng);

  std::size_t feature_width() const { return psi.in_features(); }
  std::size_t num_classes() const { return psi.out_features(); }
  std::vector<Parameter*> parameters();
};

/// o = h W + b, clamped to [-30, 30].
Tensor class_logits(const Tensor& h, Linear& psi);

/// Plain softmax through a log-sum-exp shift.
Tensor softmax_prob(const Tensor& o);

/// rho = sigmoid(h W_theta + b_theta), unclamped.
Tensor retain_prob(const Tensor& h, Linear& theta);

/// Concrete relaxation of Ber(rho):
/// z = sigmoid((logit(rho) + logit(u)) / tau). `u` should be a constant.
Tensor sample_relaxed_mask(const Tensor& rho, const Tensor& u, double tau);

struct Likelihood {
  /// log p(y_t | x, z), B x 1.
  Tensor log_target;
  /// log of the full masked class distribution, B x K.
  Tensor log_probs;

  Matrix probs() const { return log_probs.value().array().exp(); }
};

/// p_k = (z_k + eps) e^{o_k} / sum_j (z_j + eps) e^{o_j}, evaluated in log space.
Likelihood dropmax_log_likelihood(const Tensor& o, const Tensor& z, const Tensor& onehot,
                                  double epsilon);

struct PosteriorGate {
  /// Rescaling logits r = h W_phi + b_phi.
  Tensor r;
  /// g = sigmoid(stop_grad(h W_theta + b_theta) + r), clamped.
  Tensor g;
};

/// Gradients of g reach phi and h, never theta.
PosteriorGate posterior_gate(const Tensor& h, Linear& theta, Linear& phi);

/// Summed binary cross-entropy of sigmoid(r) against the one-hot labels.
Tensor aux_loss(const Tensor& r, const Tensor& onehot);

/// q_k = g_k off target, q_t = 1.
Tensor approx_posterior(const Tensor& g, const Tensor& onehot);

/// Per-instance KL[q || Ber(rho)] with the target term -log rho_t. B x 1.
/// rho is clamped internally; `q` must hold 1 at the target.
Tensor kl_divergence(const Tensor& q, const Tensor& rho, const Tensor& onehot);

/// Per-instance H = sum_k rho log rho + (1-rho) log(1-rho) <= 0. B x 1.
Tensor entropy_reg(const Tensor& rho);

struct ObjectiveTerms {
  /// Scalar: sum_i [nll_i + kl_i -/+ H_i] + aux.
  Tensor total;
  Tensor nll;      ///< B x 1, averaged over the training samples
  Tensor kl;       ///< B x 1
  Tensor entropy;  ///< B x 1, H before sign or scaling
  Tensor aux;      ///< scalar; constant zero for q_equals_p
  Tensor rho;      ///< B x K, clamped prior retain probabilities
};

/// Full training objective for features `h`. Relaxed masks are drawn from q
/// with noise from `noise`; the target mask is the constant 1.
ObjectiveTerms total_objective(Tape& tape, const Tensor& h, const Tensor& onehot, DropMaxHead& head,
                               const DropMaxConfig& config, Rng& noise);

/// Monte-Carlo predictive distribution with relaxed masks drawn from the
/// prior over all K classes. B x K.
Matrix predict_mc(Tape& tape, const Tensor& h, DropMaxHead& head, const DropMaxConfig& config,
                  int samples, Rng& noise);

/// Deterministic predictor: the masked likelihood with z replaced by rho.
Matrix predict_mean(Tape& tape, const Tensor& h, DropMaxHead& head, double epsilon);

}  // namespace dropmax
