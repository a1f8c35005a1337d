#include "dropmax/optim.hpp"

#include <cmath>

#include "dropmax/error.hpp"

namespace dropmax {

namespace {

void ensure_slots(std::vector<Matrix>& slots, std::span<Parameter* const> params) {
  if (slots.size() == params.size()) return;
  if (!slots.empty()) throw ContractError("optimizer state was built for a different parameter list");
  for (Parameter* p : params) slots.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
}

}  // namespace

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  ensure_slots(state.first, params);
  ensure_slots(state.second, params);
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + p.name);
    }
    Matrix& m = state.first[i];
    Matrix& v = state.second[i];
    m = beta1 * m + (1.0 - beta1) * p.grad;
    v = beta2 * v + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

void sgd_momentum_step(std::span<Parameter* const> params, MomentumState& state, double lr,
                       double momentum) {
  ensure_slots(state.velocity, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix& v = state.velocity[i];
    v = momentum * v + p.grad;
    p.value -= lr * v;
  }
}

void apply_weight_decay(std::span<Parameter* const> params, double lambda,
                        const std::set<ParamGroup>& exempt) {
  if (lambda < 0.0) throw ConfigError("weight decay must be >= 0");
  if (lambda == 0.0) return;
  for (Parameter* p : params) {
    if (exempt.contains(p->group)) continue;
    p->grad += lambda * p->value;
  }
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd-momentum";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + name + "'");
}

namespace {

class Adam final : public Optimizer {
 public:
  void step(std::span<Parameter* const> params, double lr) override { adam_step(params, state_, lr); }

 private:
  AdamState state_;
};

class SgdMomentum final : public Optimizer {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}
  void step(std::span<Parameter* const> params, double lr) override {
    sgd_momentum_step(params, state_, lr, momentum_);
  }

 private:
  double momentum_;
  MomentumState state_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double momentum) {
  if (kind == OptimizerKind::adam) return std::make_unique<Adam>();
  return std::make_unique<SgdMomentum>(momentum);
}

double scheduled_lr(double base, std::span<const std::size_t> milestones, double decay,
                    std::size_t epoch) {
  double lr = base;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr *= decay;
  }
  return lr;
}

}  // namespace dropmax
