#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dropmax/autodiff.hpp"

namespace dropmax {

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;
};

/// One bias-corrected Adam update over `params` using their current grads.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct MomentumState {
  std::vector<Matrix> velocity;
};

/// v <- mu v + g; p <- p - lr v.
void sgd_momentum_step(std::span<Parameter* const> params, MomentumState& state, double lr,
                       double momentum);

/// grad += lambda * value for every parameter whose group is not exempt.
void apply_weight_decay(std::span<Parameter* const> params, double lambda,
                        const std::set<ParamGroup>& exempt);

enum class OptimizerKind { adam, sgd_momentum };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Parameter* const> params, double lr) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double momentum = 0.9);

/// Step schedule: lr * decay^(number of milestones <= epoch).
double scheduled_lr(double base, std::span<const std::size_t> milestones, double decay,
                    std::size_t epoch);

}  // namespace dropmax
