#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/rng.hpp"

namespace dropmax {

/// Affine map h -> h W + b with W: in x out, b: 1 x out.
struct Linear {
  Parameter weight;
  Parameter bias;

  /// Weights ~ U(+-sqrt(6/(in+out))), bias 0.
  static Linear glorot(const std::string& name, ParamGroup group, std::size_t in, std::size_t out,
                       Rng& rng);
  static Linear zeros(const std::string& name, ParamGroup group, std::size_t in, std::size_t out);

  std::size_t in_features() const { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out_features() const { return static_cast<std::size_t>(weight.value.cols()); }

  Tensor forward(Tape& tape, const Tensor& h);
};

enum class Activation { relu, tanh };

/// Fully connected feature extractor (the omega parameters). With no hidden
/// layers it is the identity map.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, Activation act, Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const;
  Activation activation() const { return act_; }
  std::vector<Parameter*> parameters();

 private:
  std::size_t input_dim_ = 0;
  Activation act_ = Activation::relu;
  std::vector<Linear> layers_;
};

}  // namespace dropmax
