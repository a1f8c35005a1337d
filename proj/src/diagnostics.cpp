#include "dropmax/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "dropmax/data.hpp"

namespace dropmax {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::vector<double> draw(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

}  // namespace

oracle::GradcheckReport gradcheck_model(ModelSpec spec, const ToyProblem& toy,
                                        const oracle::GradcheckOptions& options) {
  spec.hidden = toy.hidden;
  spec.activation = Activation::tanh;
  Classifier model(spec, toy.input_dim, toy.num_classes, toy.seed);

  Rng data_rng = Rng::derive(toy.seed, Stream::synthetic, 0);
  LabeledBatch batch;
  batch.num_classes = toy.num_classes;
  batch.x.resize(static_cast<Eigen::Index>(toy.batch), static_cast<Eigen::Index>(toy.input_dim));
  for (Eigen::Index i = 0; i < batch.x.size(); ++i) batch.x.data()[i] = data_rng.normal();
  for (std::size_t i = 0; i < toy.batch; ++i) batch.targets.push_back(static_cast<int>(i % toy.num_classes));

  // The first evaluation is at the base point; later ones replay its
  // stop-gradient outputs so they stay constant under perturbation.
  std::optional<std::vector<Matrix>> stopped;
  const oracle::LossEvaluator loss = [&](bool with_grad) {
    Tape tape;
    if (stopped) tape.replay_stopped(*stopped);
    Rng noise = Rng::derive(toy.seed, Stream::noise, 0);
    Tensor l = model.loss(tape, batch, noise);
    if (with_grad) {
      model.zero_grad();
      tape.backward(l);
    }
    if (!stopped) stopped = tape.stopped_values();
    return l.item();
  };
  const std::vector<Parameter*> params = model.parameters();
  return oracle::finite_difference_gradcheck(loss, params, options);
}

std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& options) {
  constexpr double kEps = 1e-20;
  std::vector<CheckResult> out;
  Rng rng = Rng::derive(options.seed, Stream::oracle, 0);
  const std::size_t k = options.posterior_classes;

  double worst_residual = 0.0;
  double worst_retained = 1.0;
  double worst_total = 0.0;
  for (std::size_t i = 0; i < options.posterior_draws; ++i) {
    const auto logits = draw(rng, k, -options.logit_bound, options.logit_bound);
    const auto rho = draw(rng, k, 0.0, 1.0);
    const int t = static_cast<int>(rng.below(k));
    const auto post = oracle::brute_force_posterior(logits, rho, t, kEps);
    worst_residual = std::max(worst_residual, oracle::observation2_check(post));
    worst_retained = std::min(worst_retained, oracle::target_retained_given_nonzero(post));
    worst_total = std::max(worst_total, std::abs(post.total() - 1.0));
  }
  out.push_back({"posterior mass with target dropped", worst_residual < 1e-10, "max " + sci(worst_residual)});
  out.push_back({"target retained given nonzero mask", worst_retained >= 1.0 - 1e-10,
                 "min " + sci(worst_retained)});
  out.push_back({"posterior normalization", worst_total <= 1e-12, "max |sum - 1| " + sci(worst_total)});

  std::size_t held = 0;
  for (std::size_t i = 0; i < options.stability_draws; ++i) {
    const auto logits = draw(rng, k, -options.logit_bound, options.logit_bound);
    const int t = static_cast<int>(rng.below(k));
    const double rho_nt = 0.05 + 0.9 * rng.uniform();
    const double rho_t = rho_nt + (1.0 - rho_nt) * (0.01 + 0.99 * rng.uniform());
    if (oracle::stability_inequality_check(logits, t, rho_t, rho_nt, kEps)) ++held;
  }
  out.push_back({"stability inequality under a larger target retain", held == options.stability_draws,
                 std::to_string(held) + "/" + std::to_string(options.stability_draws)});

  double boundary = 0.0;
  for (std::size_t i = 0; i < options.stability_draws; ++i) {
    const auto logits = draw(rng, k, -options.logit_bound, options.logit_bound);
    const double r = rng.uniform();
    boundary = std::max(boundary, std::abs(oracle::stability_gap(logits, static_cast<int>(rng.below(k)), r, r, kEps)));
  }
  out.push_back({"stability gap at equal retains", boundary == 0.0, "max |gap| " + sci(boundary)});

  const auto logits = draw(rng, k, -options.logit_bound, options.logit_bound);
  const auto rho = draw(rng, k, 0.0, 1.0);
  const int t = static_cast<int>(rng.below(k));
  const auto report = oracle::loss_decomposition_check(logits, rho, t, options.decomposition_samples, rng, kEps);
  out.push_back({"per-sample loss decomposition", report.max_deviation <= 1e-12,
                 "max deviation " + sci(report.max_deviation)});

  const auto jensen = oracle::jensen_bound(logits, rho, t, kEps);
  out.push_back({"Jensen bound on the expected regularizer", jensen.expected_regularizer <= jensen.bound + 1e-9,
                 "E[M] " + sci(jensen.expected_regularizer) + " <= " + sci(jensen.bound)});
  return out;
}

}  // namespace dropmax
