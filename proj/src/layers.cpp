#include "dropmax/layers.hpp"

#include <cmath>

#include "dropmax/error.hpp"

namespace dropmax {

Linear Linear::glorot(const std::string& name, ParamGroup group, std::size_t in, std::size_t out,
                      Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return {Parameter(name + ".weight", group, std::move(w)),
          Parameter(name + ".bias", group, Matrix::Zero(1, static_cast<Eigen::Index>(out)))};
}

Linear Linear::zeros(const std::string& name, ParamGroup group, std::size_t in, std::size_t out) {
  return {Parameter(name + ".weight", group,
                    Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out))),
          Parameter(name + ".bias", group, Matrix::Zero(1, static_cast<Eigen::Index>(out)))};
}

Tensor Linear::forward(Tape& tape, const Tensor& h) {
  if (h.cols() != in_features()) {
    throw DimensionError(weight.name + ": expected width " + std::to_string(in_features()) +
                         ", got " + std::to_string(h.cols()));
  }
  return matmul(h, tape.parameter(weight)) + tape.parameter(bias);
}

Mlp::Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, Activation act, Rng& rng)
    : input_dim_(input_dim), act_(act) {
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.push_back(Linear::glorot("omega." + std::to_string(i), ParamGroup::omega, in, hidden[i], rng));
    in = hidden[i];
  }
}

std::size_t Mlp::output_dim() const {
  return layers_.empty() ? input_dim_ : layers_.back().out_features();
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) {
  Tensor h = x;
  for (Linear& layer : layers_) {
    h = layer.forward(tape, h);
    h = act_ == Activation::relu ? relu(h) : tanh(h);
  }
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Linear& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

}  // namespace dropmax
