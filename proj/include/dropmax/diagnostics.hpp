#pragma once

// Self-checks shared by the `gradcheck` and `oracle` commands and the test
// suites.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dropmax/model.hpp"
#include "dropmax/oracle.hpp"

namespace dropmax {

/// Small smooth problem for gradient checks: tanh extractor, fixed features
/// and labels, and one frozen noise stream reused on every evaluation.
struct ToyProblem {
  std::size_t num_classes = 4;
  std::size_t batch = 8;
  std::size_t input_dim = 5;
  std::vector<std::size_t> hidden{6};
  std::uint64_t seed = 0;
};

/// Finite-difference check of the full training loss of `spec` (hidden layers
/// and activation are taken from `toy`).
oracle::GradcheckReport gradcheck_model(ModelSpec spec, const ToyProblem& toy,
                                        const oracle::GradcheckOptions& options = {});

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct OracleSuiteOptions {
  std::size_t posterior_draws = 100;
  std::size_t posterior_classes = 8;
  double logit_bound = 10.0;
  std::size_t stability_draws = 1000;
  std::size_t decomposition_samples = 10000;
  std::uint64_t seed = 0;
};

/// Posterior enumeration, target-retention, stability, loss decomposition
/// and Jensen bound checks on random draws.
std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& options = {});

}  // namespace dropmax
