#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fd.hpp"
#include "tcrl/mlp.hpp"

using namespace tcrl;
using ad::Tape;
using ad::Var;
using M = Matrix<double>;

namespace {

M random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Straight-line forward pass: explicit loops, no Eigen products.
M oracle_forward(const ParamSet<double>& ps, const std::string& prefix, const MlpSpec& spec, const M& x) {
  M cur = x;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const M& w = ps.at(weight_path(prefix, l)).value;
    const M& b = ps.at(bias_path(prefix, l)).value;
    M next(cur.rows(), w.cols());
    for (Eigen::Index i = 0; i < cur.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double acc = b(0, j);
        for (Eigen::Index k = 0; k < w.rows(); ++k) acc += cur(i, k) * w(k, j);
        const bool last = l + 1 == spec.num_layers();
        if (!last) acc = acc > 0 ? acc : std::exp(acc) - 1;
        if (last && spec.output_activation == Activation::tanh) acc = std::tanh(acc);
        next(i, j) = acc;
      }
    }
    cur = next;
  }
  return cur;
}

}  // namespace

TEST(Elu, ClosedFormPoints) {
  M x(1, 3);
  x << 0, 1, -1;
  const M y = ad::elu_values(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 1.0);
  EXPECT_NEAR(y(0, 2), std::exp(-1.0) - 1, 1e-15);
  EXPECT_NEAR(y(0, 2), -0.63212, 1e-5);
}

TEST(MlpForward, ZeroWeightsGiveZeroOutput) {
  ParamSet<double> ps;
  Rng rng(1);
  MlpSpec spec{3, {4}, 2};
  init_mlp(ps, "net", spec, rng);
  for (auto& [path, p] : ps.entries()) p.value.setZero();
  Tape<double> t;
  const auto y = mlp_forward(t, ps, "net", spec, t.constant(random_matrix(rng, 5, 3)));
  EXPECT_EQ(y.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpForward, IdentityLinearLayer) {
  // One hidden layer with identity weights; ELU is identity on positive inputs.
  ParamSet<double> ps;
  Rng rng(2);
  MlpSpec spec{3, {3}, 3};
  init_mlp(ps, "net", spec, rng);
  ps.at("net.layer0.weight").value = M::Identity(3, 3);
  ps.at("net.layer1.weight").value = M::Identity(3, 3);
  const M x = random_matrix(rng, 4, 3, 0.1, 2.0);
  EXPECT_TRUE(mlp_infer(ps, "net", spec, x).isApprox(x, 1e-15));
}

TEST(MlpForward, MatchesStraightLineOracle) {
  ParamSet<double> ps;
  Rng rng(3);
  MlpSpec spec{3, {4}, 2};
  init_mlp(ps, "net", spec, rng);
  for (auto& [path, p] : ps.entries()) p.value = random_matrix(rng, p.value.rows(), p.value.cols());
  const M x = random_matrix(rng, 6, 3, -2, 2);
  Tape<double> t;
  const M taped = mlp_forward(t, ps, "net", spec, t.constant(x)).value();
  const M ref = oracle_forward(ps, "net", spec, x);
  EXPECT_LE((taped - ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((mlp_infer(ps, "net", spec, x) - ref).cwiseAbs().maxCoeff(), 1e-12);

  spec.output_activation = Activation::tanh;
  EXPECT_LE((mlp_infer(ps, "net", spec, x) - oracle_forward(ps, "net", spec, x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MlpForward, ShapeMismatchNamesPath) {
  ParamSet<double> ps;
  Rng rng(4);
  MlpSpec spec{3, {4}, 2};
  init_mlp(ps, "policy", spec, rng);
  Tape<double> t;
  try {
    mlp_forward(t, ps, "policy", spec, t.constant(M::Zero(2, 5)));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("policy"), std::string::npos);
  }
  ps.at("policy.layer1.weight").value = M::Zero(3, 2);
  EXPECT_THROW(mlp_forward(t, ps, "policy", spec, t.constant(M::Zero(2, 3))), ConfigError);
}

TEST(InitMlp, UniformFanInAndZeroBias) {
  ParamSet<double> ps;
  Rng rng(5);
  MlpSpec spec{16, {64}, 8};
  init_mlp(ps, "n", spec, rng);
  const M& w = ps.at("n.layer0.weight").value;
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.8 / std::sqrt(16.0));
  EXPECT_EQ(ps.at("n.layer0.bias").value.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  Rng rng(6);
  auto x = t.variable(random_matrix(rng, 3, 4));
  t.backward(ad::sum(x));
  EXPECT_TRUE(x.grad().isApprox(M::Ones(3, 4)));
}

TEST(Backward, DotWithItselfGivesTwoX) {
  Tape<double> t;
  Rng rng(7);
  const M xv = random_matrix(rng, 1, 6);
  auto x = t.variable(xv);
  t.backward(ad::sum(ad::mul(x, x)));
  EXPECT_LE((x.grad() - 2 * xv).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape<double> t;
  auto x = t.variable(M::Ones(2, 2));
  EXPECT_THROW(t.backward(ad::scale(x, 2.0)), UsageError);
}

TEST(Backward, UnreachableParametersGetZeroGrad) {
  ParamSet<double> ps;
  Rng rng(8);
  init_mlp(ps, "a", MlpSpec{2, {3}, 1}, rng);
  init_mlp(ps, "b", MlpSpec{2, {3}, 1}, rng);
  Tape<double> t;
  auto y = mlp_forward(t, ps, "a", MlpSpec{2, {3}, 1}, t.constant(random_matrix(rng, 4, 2)));
  backward(t, ad::mean(y), ps);
  for (auto& [path, p] : ps.entries()) {
    ASSERT_TRUE(p.has_grad()) << path;
    if (path.starts_with("b.")) EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << path;
  }
  EXPECT_GT(ps.at("a.layer1.bias").grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, DetachBlocksGradient) {
  Tape<double> t;
  auto x = t.variable(M::Constant(1, 3, 2.0));
  auto y = ad::add(ad::square(ad::detach(x)), x);
  t.backward(ad::sum(y));
  EXPECT_TRUE(x.grad().isApprox(M::Ones(1, 3)));
}

TEST(Backward, ClampStraightThroughPassesGradient) {
  Tape<double> t;
  M v(1, 3);
  v << -2, 0.5, 3;
  auto x = t.variable(v);
  auto c = ad::clamp_straight_through(x, -1.0, 1.0);
  EXPECT_EQ(c.value()(0, 0), -1.0);
  EXPECT_EQ(c.value()(0, 2), 1.0);
  t.backward(ad::sum(c));
  EXPECT_TRUE(x.grad().isApprox(M::Ones(1, 3)));

  Tape<double> t2;
  auto x2 = t2.variable(v);
  t2.backward(ad::sum(ad::clamp(x2, -1.0, 1.0)));
  EXPECT_EQ(x2.grad()(0, 0), 0.0);
  EXPECT_EQ(x2.grad()(0, 1), 1.0);
  EXPECT_EQ(x2.grad()(0, 2), 0.0);
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
  ParamSet<double> ps;
  Rng rng(9);
  ps.add("a", random_matrix(rng, 4, 3));
  ps.add("b", random_matrix(rng, 4, 3));
  ps.add("w", random_matrix(rng, 3, 5));
  ps.add("bias", random_matrix(rng, 1, 5));
  ps.add("col", random_matrix(rng, 4, 1));
  const fd::LossFn f = [](Tape<double>& t, ParamSet<double>& p) {
    auto a = bind_param(t, p, "a");
    auto b = bind_param(t, p, "b");
    auto h = ad::affine(ad::elu(a), bind_param(t, p, "w"), bind_param(t, p, "bias"));
    auto g = ad::matmul(ad::tanh(b), bind_param(t, p, "w"));
    auto m = ad::minimum(ad::mul(h, g), ad::exp(ad::scale(g, 0.3)));
    auto cat = ad::concat_cols(m, ad::mul_col(a, bind_param(t, p, "col")));
    auto sl = ad::slice_cols(cat, 2, 5);
    auto cos = ad::row_cosine(a, b);
    auto r = ad::add(ad::row_sum(ad::square(sl)), ad::row_mean(ad::sub(a, b)));
    auto l = ad::add(ad::mean(ad::mul(r, cos)), ad::sum(ad::clamp(ad::add_scalar(cat, 0.1), -0.7, 0.7)));
    return l;
  };
  const auto res = fd::check(ps, f);
  EXPECT_GT(res.analytic_norm, 0.0);
  EXPECT_LE(res.rel_error, 1e-5);
}

TEST(Backward, MlpMatchesFiniteDifferences) {
  ParamSet<double> ps;
  Rng rng(10);
  MlpSpec spec{5, {8, 8}, 3};
  spec.output_activation = Activation::tanh;
  init_mlp(ps, "net", spec, rng);
  const M x = random_matrix(rng, 6, 5, -2, 2);
  const M y = random_matrix(rng, 6, 3);
  const auto res = fd::check(ps, [&](Tape<double>& t, ParamSet<double>& p) {
    return ad::mean(ad::square(ad::sub(mlp_forward(t, p, "net", spec, t.constant(x)), t.constant(y))));
  });
  EXPECT_LE(res.rel_error, 1e-5);
}

TEST(Tape, DeterministicValuesAndGradients) {
  auto run = [] {
    ParamSet<float> ps;
    Rng rng(11);
    MlpSpec spec{4, {8}, 2};
    init_mlp(ps, "n", spec, rng);
    const Matrix<float> x = random_matrix(rng, 5, 4).cast<float>();
    Tape<float> t;
    auto y = ad::mean(ad::square(mlp_forward(t, ps, "n", spec, t.constant(x))));
    backward(t, y, ps);
    return std::make_pair(y.value()(0, 0), ps.at("n.layer0.weight").grad);
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(std::memcmp(g1.data(), g2.data(), sizeof(float) * g1.size()), 0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet<double> ps;
  ps.add("x", M::Constant(2, 2, 0.7));
  ps.at("x").grad = M::Zero(2, 2);
  adam_step(ps, 1e-3, {""});
  EXPECT_TRUE(ps.at("x").value.isApprox(M::Constant(2, 2, 0.7)));
  EXPECT_EQ(ps.at("x").adam_t, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet<double> ps;
  ps.add("x", M::Zero(1, 3));
  M g(1, 3);
  g << 0.5, -2.0, 1e-3;
  ps.at("x").grad = g;
  adam_step(ps, 0.01, {""});
  for (int i = 0; i < 3; ++i) {
    const double expected = -0.01 * std::abs(g(0, i)) / (std::abs(g(0, i)) + 1e-8) * (g(0, i) > 0 ? 1 : -1);
    EXPECT_NEAR(ps.at("x").value(0, i), expected, 1e-12);
  }
}

TEST(Adam, FiveStepsMatchScalarRecurrence) {
  ParamSet<double> ps;
  ps.add("x", M::Constant(1, 1, 0.3));
  const double g = 0.25, lr = 0.05;
  double x = 0.3, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    ps.at("x").grad = M::Constant(1, 1, g);
    adam_step(ps, lr, {""});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(ps.at("x").value(0, 0), x, 1e-12);
  EXPECT_EQ(ps.at("x").adam_t, 5);
}

TEST(Adam, MissingGradientIsInternalErrorNamingParameter) {
  ParamSet<double> ps;
  ps.add("encoder.layer0.weight", M::Zero(1, 1));
  try {
    adam_step(ps, 1e-3, {"encoder."});
    FAIL();
  } catch (const InternalError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.layer0.weight"), std::string::npos);
  }
}
