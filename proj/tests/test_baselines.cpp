#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dropmax/baselines.hpp"
#include "dropmax/batch.hpp"
#include "dropmax/diagnostics.hpp"
#include "dropmax/dropmax.hpp"
#include "dropmax/error.hpp"
#include "dropmax/oracle.hpp"
#include "support.hpp"

using namespace dropmax;
using dropmax::testing::random_matrix;

TEST(ModelKind, NamesRoundTrip) {
  for (ModelKind k : {ModelKind::softmax, ModelKind::sampled, ModelKind::random_dropmax, ModelKind::det_attention,
                      ModelKind::det_dropmax, ModelKind::dropmax, ModelKind::dropmax_qp}) {
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  }
  EXPECT_EQ(to_string(ModelKind::random_dropmax), "random-dropmax");
  EXPECT_THROW(parse_model_kind("sparsemax"), ConfigError);
}

TEST(BaselineSpec, GridMembership) {
  BaselineSpec s{ModelKind::random_dropmax, 0.3, 0.4, 1.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s.retain = 0.6;
  EXPECT_NO_THROW(s.validate());
  s = {ModelKind::sampled, 0.4, 0.5, 1.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {ModelKind::dropmax_qp, 0.4, 0.4, 0.5};
  EXPECT_THROW(s.validate(), ConfigError);
  s.gamma = 0.01;
  EXPECT_NO_THROW(s.validate());
}

TEST(SoftmaxLoss, ClosedForms) {
  Tape tape;
  const Matrix y = one_hot({0, 3, 9}, 10);
  EXPECT_NEAR(softmax_loss(tape.constant(Matrix::Zero(3, 10)), tape.constant(y)).item(), 3.0 * std::log(10.0), 1e-12);
  const Matrix perfect = y * 30.0;
  EXPECT_LT(softmax_loss(tape.constant(perfect), tape.constant(y)).item(), 1e-9);
}

TEST(SampleClassSubset, SizeContainsTargetAndDistinct) {
  Rng rng(5);
  EXPECT_EQ(sample_class_subset(10, 4, 0.2, rng).size(), 2u);
  EXPECT_EQ(sample_class_subset(10, 4, 0.6, rng).size(), 6u);
  EXPECT_EQ(sample_class_subset(7, 2, 0.4, rng).size(), 3u);
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = static_cast<int>(rng.below(10));
    const auto s = sample_class_subset(10, t, 0.4, rng);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
    EXPECT_TRUE(std::binary_search(s.begin(), s.end(), t));
  }
  EXPECT_THROW(sample_class_subset(3, 0, 0.2, rng), ConfigError);
}

TEST(SampledSoftmax, FullFractionEqualsSoftmax) {
  Rng rng(6);
  Tape tape;
  const Matrix o = random_matrix(rng, 4, 6, -3, 3);
  const std::vector<int> t{0, 5, 1, 3};
  EXPECT_NEAR(sampled_softmax_loss(tape.constant(o), t, 1.0, rng).item(),
              softmax_loss(tape.constant(o), tape.constant(one_hot(t, 6))).item(), 1e-12);
}

TEST(RandomDropMax, MaskKeepsTargetAndFullRetainIsSoftmax) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<int> t{static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5))};
    const Matrix z = random_dropmax_mask(t, 5, 0.2, rng);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(z(static_cast<Eigen::Index>(i), t[i]), 1.0);
    EXPECT_TRUE(((z.array() == 0.0) || (z.array() == 1.0)).all());
  }
  Tape tape;
  const Matrix o = random_matrix(rng, 3, 5, -3, 3);
  const std::vector<int> t{1, 2, 4};
  const Tensor y = tape.constant(one_hot(t, 5));
  EXPECT_EQ(random_dropmax_loss(tape.constant(o), y, t, 1.0, 1e-20, rng).item(),
            softmax_loss(tape.constant(o), y).item());
  EXPECT_THROW(random_dropmax_mask(t, 5, 0.0, rng), ConfigError);
  EXPECT_THROW(random_dropmax_mask(t, 5, 1.5, rng), ConfigError);
}

TEST(RandomDropMax, ExpectedLossMatchesEnumeration) {
  const std::vector<double> o{1.0, -0.5, 0.3, 2.0};
  const int t = 2;
  const double retain = 0.4;
  const double exact = oracle::expected_nll(o, std::vector<double>{retain, retain, 1.0, retain}, t, 1e-20);
  constexpr int n = 10000;
  Matrix logits(n, 4);
  for (int i = 0; i < n; ++i) logits.row(i) << o[0], o[1], o[2], o[3];
  const std::vector<int> targets(n, t);
  Tape tape;
  Rng rng(8);
  const double mean =
      random_dropmax_loss(tape.constant(logits), tape.constant(one_hot(targets, 4)), targets, retain, 1e-20, rng)
          .item() /
      n;
  EXPECT_NEAR(mean, exact, 0.02);
}

TEST(Attention, EqualWeightsGiveSoftmaxAndRowsNormalize) {
  Rng rng(9);
  Tape tape;
  const Matrix o = random_matrix(rng, 5, 6, -5, 5);
  const Matrix plain = softmax_prob(tape.constant(o)).value();
  for (double a : {-3.0, 0.0, 2.5}) {
    const Matrix p = attention_log_probs(tape.constant(o), tape.constant(Matrix::Constant(5, 6, a))).value().array().exp();
    EXPECT_LT((p - plain).cwiseAbs().maxCoeff(), 1e-10);
  }
  const Matrix p = attention_log_probs(tape.constant(o), tape.constant(random_matrix(rng, 5, 6, -4, 4))).value().array().exp();
  EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(DeterministicDropMax, SupervisionTermLimits) {
  Rng rng(10);
  Tape tape;
  const Matrix o = random_matrix(rng, 3, 4, -2, 2);
  const Matrix y = one_hot({0, 1, 3}, 4);
  const Tensor zero = tape.constant(Matrix::Zero(3, 4));
  const double half = deterministic_dropmax_loss(tape.constant(o), zero, tape.constant(y)).item() -
                      deterministic_attention_loss(tape.constant(o), zero, tape.constant(y)).item();
  EXPECT_NEAR(half, 12.0 * std::numbers::ln2, 1e-12);
  const Tensor perfect = tape.constant((2.0 * y.array() - 1.0) * 700.0);
  const double sharp = deterministic_dropmax_loss(tape.constant(o), perfect, tape.constant(y)).item() -
                       deterministic_attention_loss(tape.constant(o), perfect, tape.constant(y)).item();
  EXPECT_NEAR(sharp, 0.0, 1e-12);
}

TEST(Baselines, TestTimeForwardIsDeterministic) {
  for (ModelKind kind : {ModelKind::softmax, ModelKind::sampled, ModelKind::random_dropmax, ModelKind::det_attention,
                         ModelKind::det_dropmax}) {
    ModelSpec spec;
    spec.kind = kind;
    spec.hidden = {5};
    Classifier model(spec, 3, 4, 1);
    Rng data(2);
    const Matrix x = random_matrix(data, 6, 3);
    Rng a(1);
    Rng b(2);
    EXPECT_EQ(model.predict(x, Predictor::mc, 10, a).probs, model.predict(x, Predictor::mc, 10, b).probs)
        << to_string(kind);
  }
}

TEST(Baselines, ShareExtractorInitialization) {
  ModelSpec spec;
  spec.hidden = {8};
  spec.kind = ModelKind::softmax;
  Classifier a(spec, 4, 3, 77);
  spec.kind = ModelKind::dropmax;
  Classifier b(spec, 4, 3, 77);
  EXPECT_EQ(a.parameters()[0]->value, b.parameters()[0]->value);
  EXPECT_EQ(a.head().psi.weight.value, b.head().psi.weight.value);
}

TEST(Baselines, ParameterGroupsPerKind) {
  auto groups = [](ModelKind kind) {
    ModelSpec spec;
    spec.kind = kind;
    Classifier m(spec, 3, 4, 0);
    std::set<ParamGroup> g;
    for (Parameter* p : m.parameters()) g.insert(p->group);
    return g;
  };
  EXPECT_EQ(groups(ModelKind::softmax), (std::set<ParamGroup>{ParamGroup::psi}));
  EXPECT_EQ(groups(ModelKind::det_attention), (std::set<ParamGroup>{ParamGroup::psi, ParamGroup::theta}));
  EXPECT_EQ(groups(ModelKind::dropmax),
            (std::set<ParamGroup>{ParamGroup::psi, ParamGroup::theta, ParamGroup::phi}));
}
