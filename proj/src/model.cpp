#include "dropmax/model.hpp"

#include "dropmax/error.hpp"

namespace dropmax {

void ModelSpec::validate() const {
  dropmax.validate();
  baseline().validate();
  for (std::size_t w : hidden) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
}

Classifier::Classifier(ModelSpec spec, std::size_t input_dim, std::size_t num_classes,
                       std::uint64_t seed)
    : spec_(std::move(spec)) {
  spec_.validate();
  if (num_classes < 2) throw ConfigError("need at least two classes");
  Rng rng = Rng::derive(seed, Stream::init);
  extractor_ = Mlp(input_dim, spec_.hidden, spec_.activation, rng);
  // All three heads are drawn regardless of kind so that the extractor and
  // psi start identical across model kinds for a given seed.
  head_ = DropMaxHead::init(extractor_.output_dim(), num_classes, rng);
  if (spec_.dropmax.variant == Variant::q_equals_p && spec_.kind == ModelKind::dropmax) {
    throw ConfigError("use model kind dropmax-qp for the q=p variant");
  }
  if (spec_.kind == ModelKind::dropmax_qp) spec_.dropmax.variant = Variant::q_equals_p;
}

std::vector<Parameter*> Classifier::parameters() {
  std::vector<Parameter*> out = extractor_.parameters();
  out.push_back(&head_.psi.weight);
  out.push_back(&head_.psi.bias);
  switch (spec_.kind) {
    case ModelKind::softmax:
    case ModelKind::sampled:
    case ModelKind::random_dropmax:
      break;
    case ModelKind::det_attention:
    case ModelKind::det_dropmax:
    case ModelKind::dropmax_qp:
      out.push_back(&head_.theta.weight);
      out.push_back(&head_.theta.bias);
      break;
    case ModelKind::dropmax:
      out.push_back(&head_.theta.weight);
      out.push_back(&head_.theta.bias);
      out.push_back(&head_.phi.weight);
      out.push_back(&head_.phi.bias);
      break;
  }
  return out;
}

void Classifier::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Tensor Classifier::loss(Tape& tape, const LabeledBatch& batch, Rng& noise) {
  if (batch.num_classes != num_classes()) {
    throw ContractError("batch has " + std::to_string(batch.num_classes) + " classes, model has " +
                        std::to_string(num_classes()));
  }
  Tensor x = tape.constant(batch.x);
  Tensor onehot = tape.constant(batch.onehot());
  Tensor h = extractor_.forward(tape, x);
  const double eps = spec_.dropmax.epsilon;
  switch (spec_.kind) {
    case ModelKind::softmax:
      return softmax_loss(class_logits(h, head_.psi), onehot);
    case ModelKind::sampled:
      return sampled_softmax_loss(class_logits(h, head_.psi), batch.targets, spec_.fraction, noise);
    case ModelKind::random_dropmax:
      return random_dropmax_loss(class_logits(h, head_.psi), onehot, batch.targets, spec_.retain, eps,
                                 noise);
    case ModelKind::det_attention:
      return deterministic_attention_loss(class_logits(h, head_.psi), head_.theta.forward(tape, h),
                                          onehot);
    case ModelKind::det_dropmax:
      return deterministic_dropmax_loss(class_logits(h, head_.psi), head_.theta.forward(tape, h),
                                        onehot);
    case ModelKind::dropmax:
    case ModelKind::dropmax_qp:
      return total_objective(tape, h, onehot, head_, spec_.dropmax, noise).total;
  }
  throw ContractError("unhandled model kind");
}

Prediction Classifier::predict(const Matrix& x, Predictor predictor, int samples, Rng& noise) {
  if (static_cast<std::size_t>(x.cols()) != input_dim()) {
    throw DimensionError("predict: expected " + std::to_string(input_dim()) + " features, got " +
                         std::to_string(x.cols()));
  }
  Tape tape;
  Tensor h = extractor_.forward(tape, tape.constant(x));
  Prediction out;
  switch (spec_.kind) {
    case ModelKind::softmax:
    case ModelKind::sampled:
    case ModelKind::random_dropmax:
      out.probs = softmax_prob(class_logits(h, head_.psi)).value();
      break;
    case ModelKind::det_attention:
    case ModelKind::det_dropmax: {
      Tensor logits = head_.theta.forward(tape, h);
      out.probs = attention_log_probs(class_logits(h, head_.psi), logits).value().array().exp();
      out.retain = sigmoid(logits).value();
      break;
    }
    case ModelKind::dropmax:
    case ModelKind::dropmax_qp:
      out.probs = predictor == Predictor::mc
                      ? predict_mc(tape, h, head_, spec_.dropmax, samples, noise)
                      : predict_mean(tape, h, head_, spec_.dropmax.epsilon);
      out.retain = retain_prob(h, head_.theta).value();
      break;
  }
  return out;
}

}  // namespace dropmax
