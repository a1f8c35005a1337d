#pragma once

// Independent verifiers. Everything here works on plain doubles and hard
// {0,1} masks and shares no code with the tape-based implementation it is
// used to check.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/rng.hpp"

namespace dropmax::oracle {

/// Largest class count accepted by the 2^K enumerations.
inline constexpr std::size_t kMaxEnumeratedClasses = 20;

/// p(y_t | x, z) for one instance under the masked softmax.
double masked_likelihood(std::span<const double> logits, std::span<const double> mask, int target,
                         double epsilon);

/// Full masked class distribution for one instance.
std::vector<double> masked_distribution(std::span<const double> logits, std::span<const double> mask,
                                        double epsilon);

/// Exact posterior over hard masks, p(z | x, y) with prior prod_k Ber(rho_k).
/// Bit k of a table index is z_k.
struct MaskPosterior {
  std::size_t num_classes = 0;
  int target = 0;
  std::vector<double> table;

  double probability(std::uint32_t mask) const { return table[mask]; }
  double total() const;
  /// p(z_k = 1 | x, y).
  double marginal(std::size_t k) const;
  double target_marginal() const { return marginal(static_cast<std::size_t>(target)); }
  /// True when the joint equals the product of its marginals within `tol`.
  bool factorizes(double tol) const;
};

/// Throws SizeError for K > 20.
MaskPosterior brute_force_posterior(std::span<const double> logits, std::span<const double> rho,
                                    int target, double epsilon);

/// Posterior mass of masks that drop the target but keep some class.
double observation2_check(const MaskPosterior& post);

/// p(z_t = 1 | x, y, z != 0).
double target_retained_given_nonzero(const MaskPosterior& post);

/// sum_z p(z | x) p(. | x, z) under prod_k Ber(rho_k), by enumeration.
std::vector<double> expected_predictive(std::span<const double> logits, std::span<const double> rho,
                                        double epsilon);

/// E_z[-log p(y_t | x, z)] under prod_k Ber(rho_k), by enumeration.
double expected_nll(std::span<const double> logits, std::span<const double> rho, int target,
                    double epsilon);

/// (rho_t+eps) e^{o_t} / sum_k (rho_k+eps) e^{o_k} - e^{o_t} / sum_k e^{o_k}
/// with every non-target retain equal to `rho_nontarget`. Exactly zero when
/// the retains are all equal.
double stability_gap(std::span<const double> logits, int target, double rho_target,
                     double rho_nontarget, double epsilon);

/// stability_gap(...) > 0.
bool stability_inequality_check(std::span<const double> logits, int target, double rho_target,
                                double rho_nontarget, double epsilon);

struct DecompositionReport {
  /// max over samples of |(-log p) - (cross-entropy + M)|.
  double max_deviation = 0.0;
  double mean_nll = 0.0;
  double mean_cross_entropy = 0.0;
  double mean_regularizer = 0.0;
};

/// Draws hard masks from prod_k Ber(rho_k) and checks per sample that
/// -log p(y|x,z) = -log softmax_t(o) + log[sum (z+eps) e^o / ((z_t+eps) sum e^o)].
DecompositionReport loss_decomposition_check(std::span<const double> logits,
                                             std::span<const double> rho, int target,
                                             std::size_t samples, Rng& rng, double epsilon);

struct JensenReport {
  /// E_z[M] by enumeration.
  double expected_regularizer = 0.0;
  /// log sum (rho+eps) e^o - log sum e^o + E[-log(z_t+eps)].
  double bound = 0.0;
};

JensenReport jensen_bound(std::span<const double> logits, std::span<const double> rho, int target,
                          double epsilon);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

/// Evaluates the loss at the current parameter values. With `with_grad` the
/// evaluator must also leave d loss / d p in every `p.grad` (zeroed first).
using LossEvaluator = std::function<double(bool with_grad)>;

struct GradcheckOptions {
  double step = 1e-5;
  /// Coordinates per parameter beyond which a random subset is checked.
  std::size_t max_coords = 200;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  ParamGroup group = ParamGroup::omega;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double max_rel_error() const;
  double max_rel_error(ParamGroup group) const;
  bool has_group(ParamGroup group) const;
};

/// Central differences per coordinate; relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). Throws ContractError if two evaluations
/// at the same point disagree.
GradcheckReport finite_difference_gradcheck(const LossEvaluator& loss,
                                            std::span<Parameter* const> params,
                                            const GradcheckOptions& options = {});

}  // namespace dropmax::oracle
