#include "dropmax/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dropmax/error.hpp"

namespace dropmax::oracle {

namespace {

void check_sizes(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(std::string(what) + ": length mismatch");
  if (a.empty()) throw ContractError(std::string(what) + ": no classes");
}

void check_target(int target, std::size_t k) {
  if (target < 0 || static_cast<std::size_t>(target) >= k) throw ContractError("target out of range");
}

void check_enumerable(std::size_t k) {
  if (k > kMaxEnumeratedClasses) {
    throw SizeError("mask enumeration needs K <= " + std::to_string(kMaxEnumeratedClasses) +
                    ", got " + std::to_string(k));
  }
}

double max_of(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }

/// Mask vector for a bit pattern.
std::vector<double> mask_of(std::uint32_t bits, std::size_t k) {
  std::vector<double> z(k);
  for (std::size_t j = 0; j < k; ++j) z[j] = (bits >> j) & 1U ? 1.0 : 0.0;
  return z;
}

double prior_probability(std::uint32_t bits, std::span<const double> rho) {
  double p = 1.0;
  for (std::size_t j = 0; j < rho.size(); ++j) p *= (bits >> j) & 1U ? rho[j] : 1.0 - rho[j];
  return p;
}

double log_sum_exp(std::span<const double> v) {
  const double m = max_of(v);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double masked_likelihood(std::span<const double> logits, std::span<const double> mask, int target,
                         double epsilon) {
  check_sizes(logits, mask, "masked_likelihood");
  check_target(target, logits.size());
  const double m = max_of(logits);
  double denominator = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    denominator += (mask[k] + epsilon) * std::exp(logits[k] - m);
  }
  const auto t = static_cast<std::size_t>(target);
  return (mask[t] + epsilon) * std::exp(logits[t] - m) / denominator;
}

std::vector<double> masked_distribution(std::span<const double> logits, std::span<const double> mask,
                                        double epsilon) {
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = masked_likelihood(logits, mask, static_cast<int>(k), epsilon);
  }
  return out;
}

double MaskPosterior::total() const { return std::accumulate(table.begin(), table.end(), 0.0); }

double MaskPosterior::marginal(std::size_t k) const {
  double p = 0.0;
  for (std::uint32_t bits = 0; bits < table.size(); ++bits) {
    if ((bits >> k) & 1U) p += table[bits];
  }
  return p;
}

bool MaskPosterior::factorizes(double tol) const {
  std::vector<double> marginals(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) marginals[k] = marginal(k);
  for (std::uint32_t bits = 0; bits < table.size(); ++bits) {
    if (std::abs(table[bits] - prior_probability(bits, marginals)) > tol) return false;
  }
  return true;
}

MaskPosterior brute_force_posterior(std::span<const double> logits, std::span<const double> rho,
                                    int target, double epsilon) {
  check_sizes(logits, rho, "brute_force_posterior");
  check_target(target, logits.size());
  check_enumerable(logits.size());
  const std::size_t k = logits.size();
  MaskPosterior post;
  post.num_classes = k;
  post.target = target;
  post.table.resize(std::size_t{1} << k);
  double evidence = 0.0;
  for (std::uint32_t bits = 0; bits < post.table.size(); ++bits) {
    const std::vector<double> z = mask_of(bits, k);
    const double joint = masked_likelihood(logits, z, target, epsilon) * prior_probability(bits, rho);
    post.table[bits] = joint;
    evidence += joint;
  }
  for (double& p : post.table) p /= evidence;
  return post;
}

double observation2_check(const MaskPosterior& post) {
  const std::uint32_t target_bit = 1U << post.target;
  double residual = 0.0;
  for (std::uint32_t bits = 1; bits < post.table.size(); ++bits) {
    if ((bits & target_bit) == 0) residual += post.table[bits];
  }
  return residual;
}

double target_retained_given_nonzero(const MaskPosterior& post) {
  return post.target_marginal() / (1.0 - post.table[0]);
}

std::vector<double> expected_predictive(std::span<const double> logits, std::span<const double> rho,
                                        double epsilon) {
  check_sizes(logits, rho, "expected_predictive");
  check_enumerable(logits.size());
  const std::size_t k = logits.size();
  std::vector<double> out(k, 0.0);
  for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << k); ++bits) {
    const double prior = prior_probability(bits, rho);
    if (prior == 0.0) continue;
    const std::vector<double> dist = masked_distribution(logits, mask_of(bits, k), epsilon);
    for (std::size_t j = 0; j < k; ++j) out[j] += prior * dist[j];
  }
  return out;
}

double expected_nll(std::span<const double> logits, std::span<const double> rho, int target,
                    double epsilon) {
  check_sizes(logits, rho, "expected_nll");
  check_target(target, logits.size());
  check_enumerable(logits.size());
  const std::size_t k = logits.size();
  double out = 0.0;
  for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << k); ++bits) {
    const double prior = prior_probability(bits, rho);
    if (prior == 0.0) continue;
    out -= prior * std::log(masked_likelihood(logits, mask_of(bits, k), target, epsilon));
  }
  return out;
}

double stability_gap(std::span<const double> logits, int target, double rho_target,
                     double rho_nontarget, double epsilon) {
  check_target(target, logits.size());
  const double m = max_of(logits);
  const auto t = static_cast<std::size_t>(target);
  // Retains are expressed relative to the target's so that equal retains
  // give weights of exactly 1 and the two fractions coincide bitwise.
  const double relative = (rho_nontarget + epsilon) / (rho_target + epsilon);
  double weighted = 0.0;
  double plain = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double e = std::exp(logits[k] - m);
    weighted += (k == t ? 1.0 : relative) * e;
    plain += e;
  }
  const double et = std::exp(logits[t] - m);
  return et / weighted - et / plain;
}

bool stability_inequality_check(std::span<const double> logits, int target, double rho_target,
                                double rho_nontarget, double epsilon) {
  return stability_gap(logits, target, rho_target, rho_nontarget, epsilon) > 0.0;
}

DecompositionReport loss_decomposition_check(std::span<const double> logits,
                                             std::span<const double> rho, int target,
                                             std::size_t samples, Rng& rng, double epsilon) {
  check_sizes(logits, rho, "loss_decomposition_check");
  check_target(target, logits.size());
  const std::size_t k = logits.size();
  const auto t = static_cast<std::size_t>(target);
  const double m = max_of(logits);
  double plain = 0.0;
  for (double o : logits) plain += std::exp(o - m);
  const double cross_entropy = -(logits[t] - m - std::log(plain));

  DecompositionReport report;
  std::vector<double> z(k);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < k; ++j) z[j] = rng.bernoulli(rho[j]) ? 1.0 : 0.0;
    const double nll = -std::log(masked_likelihood(logits, z, target, epsilon));
    double weighted = 0.0;
    for (std::size_t j = 0; j < k; ++j) weighted += (z[j] + epsilon) * std::exp(logits[j] - m);
    const double regularizer = std::log(weighted) - std::log(z[t] + epsilon) - std::log(plain);
    report.max_deviation = std::max(report.max_deviation, std::abs(nll - (cross_entropy + regularizer)));
    report.mean_nll += nll;
    report.mean_regularizer += regularizer;
  }
  if (samples > 0) {
    report.mean_nll /= static_cast<double>(samples);
    report.mean_regularizer /= static_cast<double>(samples);
  }
  report.mean_cross_entropy = cross_entropy;
  return report;
}

JensenReport jensen_bound(std::span<const double> logits, std::span<const double> rho, int target,
                          double epsilon) {
  check_sizes(logits, rho, "jensen_bound");
  check_target(target, logits.size());
  check_enumerable(logits.size());
  const std::size_t k = logits.size();
  const auto t = static_cast<std::size_t>(target);

  JensenReport report;
  std::vector<double> plain_scores(logits.begin(), logits.end());
  const double log_plain = log_sum_exp(plain_scores);
  for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << k); ++bits) {
    const double prior = prior_probability(bits, rho);
    if (prior == 0.0) continue;
    const std::vector<double> z = mask_of(bits, k);
    std::vector<double> scores(k);
    for (std::size_t j = 0; j < k; ++j) scores[j] = std::log(z[j] + epsilon) + logits[j];
    report.expected_regularizer += prior * (log_sum_exp(scores) - std::log(z[t] + epsilon) - log_plain);
  }
  std::vector<double> mean_scores(k);
  for (std::size_t j = 0; j < k; ++j) mean_scores[j] = std::log(rho[j] + epsilon) + logits[j];
  const double expected_target_term =
      -rho[t] * std::log(1.0 + epsilon) - (1.0 - rho[t]) * std::log(epsilon);
  report.bound = log_sum_exp(mean_scores) - log_plain + expected_target_term;
  return report;
}

// ---------------------------------------------------------------------------

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double GradcheckReport::max_rel_error(ParamGroup group) const {
  double m = 0.0;
  for (const auto& e : entries) {
    if (e.group == group) m = std::max(m, e.max_rel_error);
  }
  return m;
}

bool GradcheckReport::has_group(ParamGroup group) const {
  return std::any_of(entries.begin(), entries.end(), [group](const auto& e) { return e.group == group; });
}

GradcheckReport finite_difference_gradcheck(const LossEvaluator& loss,
                                            std::span<Parameter* const> params,
                                            const GradcheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  const double base = loss(true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);
  const double again = loss(false);
  if (base != again) {
    throw ContractError("gradcheck: loss evaluator is not deterministic (" + std::to_string(base) +
                        " vs " + std::to_string(again) + ")");
  }

  GradcheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const auto n = static_cast<std::size_t>(p.value.size());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.max_coords) {
      Rng rng = Rng::derive(options.seed, Stream::oracle, pi);
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    GradcheckEntry entry{p.name, p.group, coords.size(), 0.0, 0.0};
    for (std::size_t c : coords) {
      double& v = p.value.data()[c];
      const double saved = v;
      v = saved + options.step;
      const double plus = loss(false);
      v = saved - options.step;
      const double minus = loss(false);
      v = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi].data()[c];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dropmax::oracle
