#include "dropmax/dropmax.hpp"

#include "dropmax/error.hpp"

namespace dropmax {

void DropMaxConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (train_samples < 1) throw ConfigError("train_samples must be >= 1");
  if (test_samples < 1) throw ConfigError("test_samples must be >= 1");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
}

DropMaxHead DropMaxHead::init(std::size_t feature_width, std::size_t num_classes, Rng& rng) {
  DropMaxHead head;
  head.psi = Linear::glorot("psi", ParamGroup::psi, feature_width, num_classes, rng);
  head.theta = Linear::glorot("theta", ParamGroup::theta, feature_width, num_classes, rng);
  head.phi = Linear::glorot("phi", ParamGroup::phi, feature_width, num_classes, rng);
  return head;
}

std::vector<Parameter*> DropMaxHead::parameters() {
  return {&psi.weight, &psi.bias, &theta.weight, &theta.bias, &phi.weight, &phi.bias};
}

Tensor class_logits(const Tensor& h, Linear& psi) {
  return clamp(psi.forward(*h.tape(), h), -kLogitClamp, kLogitClamp);
}

Tensor softmax_prob(const Tensor& o) { return exp(o - log_sum_exp(o, Axis::cols)); }

Tensor retain_prob(const Tensor& h, Linear& theta) { return sigmoid(theta.forward(*h.tape(), h)); }

namespace {

Tensor logit(const Tensor& p) { return log(p) - log(rsub_scalar(1.0, p)); }

Tensor clamp_prob(const Tensor& p) { return clamp(p, kProbClamp, 1.0 - kProbClamp); }

/// z with its target column overwritten by 1.
Tensor pin_target(const Tensor& z, const Tensor& onehot) {
  return z * rsub_scalar(1.0, onehot) + onehot;
}

}  // namespace

Tensor sample_relaxed_mask(const Tensor& rho, const Tensor& u, double tau) {
  return sigmoid(scale(logit(rho) + logit(u), 1.0 / tau));
}

Likelihood dropmax_log_likelihood(const Tensor& o, const Tensor& z, const Tensor& onehot,
                                  double epsilon) {
  Tensor scores = log(add_scalar(z, epsilon)) + o;
  Tensor log_probs = scores - log_sum_exp(scores, Axis::cols);
  Tensor log_target = reduce_sum(log_probs * onehot, Axis::cols);
  return {log_target, log_probs};
}

PosteriorGate posterior_gate(const Tensor& h, Linear& theta, Linear& phi) {
  Tape& tape = *h.tape();
  Tensor r = phi.forward(tape, h);
  Tensor g = clamp_prob(sigmoid(stop_gradient(theta.forward(tape, h)) + r));
  return {r, g};
}

Tensor aux_loss(const Tensor& r, const Tensor& onehot) {
  // -[y log sgm(r) + (1-y) log(1-sgm(r))] = softplus(r) - y r
  return reduce_sum(softplus(r) - onehot * r);
}

Tensor approx_posterior(const Tensor& g, const Tensor& onehot) { return pin_target(g, onehot); }

Tensor kl_divergence(const Tensor& q, const Tensor& rho, const Tensor& onehot) {
  Tensor p = clamp_prob(rho);
  Tensor qc = clamp_prob(q);
  Tensor off = rsub_scalar(1.0, onehot);
  Tensor bernoulli_kl = qc * (log(qc) - log(p)) +
                        rsub_scalar(1.0, qc) * (log(rsub_scalar(1.0, qc)) - log(rsub_scalar(1.0, p)));
  // Only the lower clamp applies here so that rho_t = 1 costs exactly zero.
  Tensor target_term = -(onehot * log(clamp(rho, kProbClamp, 1.0)));
  return reduce_sum(target_term + off * bernoulli_kl, Axis::cols);
}

Tensor entropy_reg(const Tensor& rho) {
  Tensor p = clamp_prob(rho);
  Tensor one_minus = rsub_scalar(1.0, p);
  return reduce_sum(p * log(p) + one_minus * log(one_minus), Axis::cols);
}

ObjectiveTerms total_objective(Tape& tape, const Tensor& h, const Tensor& onehot, DropMaxHead& head,
                               const DropMaxConfig& config, Rng& noise) {
  config.validate();
  if (onehot.cols() != head.num_classes() || onehot.rows() != h.rows()) {
    throw DimensionError("total_objective: label matrix " + to_string(onehot.shape()) +
                         " does not match batch of " + std::to_string(h.rows()) + " and " +
                         std::to_string(head.num_classes()) + " classes");
  }
  Tensor o = class_logits(h, head.psi);
  Tensor theta_logits = head.theta.forward(tape, h);
  Tensor rho = clamp_prob(sigmoid(theta_logits));

  ObjectiveTerms terms;
  terms.rho = rho;
  Tensor gate;
  if (config.variant == Variant::dropmax) {
    Tensor r = head.phi.forward(tape, h);
    gate = clamp_prob(sigmoid(stop_gradient(theta_logits) + r));
    terms.aux = aux_loss(r, onehot);
  } else {
    gate = rho;
    terms.aux = tape.constant(Matrix::Zero(1, 1));
  }
  Tensor q = approx_posterior(gate, onehot);

  const Shape mask_shape = o.shape();
  Tensor nll;
  for (int s = 0; s < config.train_samples; ++s) {
    Tensor u = sample_uniform(tape, mask_shape, noise);
    Tensor z = pin_target(sample_relaxed_mask(gate, u, config.tau), onehot);
    Tensor sample_nll = -dropmax_log_likelihood(o, z, onehot, config.epsilon).log_target;
    nll = s == 0 ? sample_nll : nll + sample_nll;
  }
  if (config.train_samples > 1) nll = scale(nll, 1.0 / config.train_samples);

  terms.nll = nll;
  terms.kl = kl_divergence(q, rho, onehot);
  terms.entropy = entropy_reg(rho);

  double entropy_weight = config.entropy_sign == EntropySign::literal ? -1.0 : 1.0;
  if (config.variant == Variant::q_equals_p) entropy_weight *= config.gamma;

  Tensor per_instance = terms.nll + terms.kl + scale(terms.entropy, entropy_weight);
  terms.total = reduce_sum(per_instance) + terms.aux;
  return terms;
}

Matrix predict_mc(Tape& tape, const Tensor& h, DropMaxHead& head, const DropMaxConfig& config,
                  int samples, Rng& noise) {
  if (samples < 1) throw ContractError("predict_mc: samples must be >= 1");
  Tensor o = class_logits(h, head.psi);
  Tensor rho = clamp_prob(retain_prob(h, head.theta));
  Tensor dummy = tape.constant(Matrix::Zero(o.value().rows(), o.value().cols()));
  Matrix acc = Matrix::Zero(o.value().rows(), o.value().cols());
  for (int s = 0; s < samples; ++s) {
    Tensor u = sample_uniform(tape, o.shape(), noise);
    Tensor z = sample_relaxed_mask(rho, u, config.tau);
    acc += dropmax_log_likelihood(o, z, dummy, config.epsilon).probs();
  }
  return acc / static_cast<double>(samples);
}

Matrix predict_mean(Tape& tape, const Tensor& h, DropMaxHead& head, double epsilon) {
  Tensor o = class_logits(h, head.psi);
  Tensor rho = retain_prob(h, head.theta);
  Tensor dummy = tape.constant(Matrix::Zero(o.value().rows(), o.value().cols()));
  return dropmax_log_likelihood(o, rho, dummy, epsilon).probs();
}

}  // namespace dropmax
