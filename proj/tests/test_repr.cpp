#include <gtest/gtest.h>

#include <cmath>

#include "fd.hpp"
#include "tcrl/repr.hpp"

using namespace tcrl;
using M = Matrix<double>;

namespace {

HeadsConfig small_cfg() { return HeadsConfig{3, 2, 4, {8, 8}, false}; }

M random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1, 1);
  return m;
}

SegmentBatch<double> random_batch(Rng& rng, int steps, int n, int od = 3, int ad = 2) {
  SegmentBatch<double> b;
  for (int h = 0; h <= steps; ++h) b.obs.push_back(random_matrix(rng, n, od));
  for (int h = 0; h < steps; ++h) {
    b.actions.push_back(random_matrix(rng, n, ad));
    b.rewards.push_back(random_matrix(rng, n, 1).cwiseAbs());
  }
  return b;
}

double row_cos(const M& a, const M& b, Eigen::Index i) {
  return a.row(i).dot(b.row(i)) / (a.row(i).norm() * b.row(i).norm());
}

}  // namespace

TEST(NegativeCosine, ClosedFormCases) {
  ad::Tape<double> t;
  M a(3, 2), b(3, 2);
  a << 1, 2, 1, 0, 3, -1;
  b << 1, 2, 0, 5, -3, 1;
  // Row 0 aligned (-1), row 1 orthogonal (0), row 2 anti-aligned (+1): mean 0.
  EXPECT_NEAR(negative_cosine(t.constant(a), t.constant(b)).value()(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(negative_cosine(t.constant(a.topRows(1)), t.constant(b.topRows(1))).value()(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(negative_cosine(t.constant(a.middleRows(1, 1)), t.constant(b.middleRows(1, 1))).value()(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(negative_cosine(t.constant(a.bottomRows(1)), t.constant(b.bottomRows(1))).value()(0, 0), 1.0, 1e-15);
}

TEST(NegativeCosine, ZeroVectorIsCountedNotFatal) {
  ad::Tape<double> t;
  M a = M::Zero(2, 3), b = M::Ones(2, 3);
  a(1, 0) = 1.0;
  std::size_t degenerate = 0;
  const auto v = negative_cosine(t.variable(a), t.constant(b), &degenerate);
  EXPECT_EQ(degenerate, 1u);
  EXPECT_TRUE(std::isfinite(v.value()(0, 0)));
  t.backward(v);
}

TEST(LatentRollout, CallCounts) {
  Rng rng(1);
  auto batch = random_batch(rng, 2, 3);
  int enc = 0, dyn = 0;
  ad::Tape<double> t;
  latent_rollout_with(
      t, batch, 1,
      [&](const ad::Var<double>& o) {
        ++enc;
        return ad::slice_cols(o, 0, 2);
      },
      [&](const ad::Var<double>& z, const ad::Var<double>&) {
        ++dyn;
        return std::make_pair(z, ad::slice_cols(z, 0, 1));
      });
  EXPECT_EQ(enc, 1);
  EXPECT_EQ(dyn, 2);
}

TEST(LatentRollout, IdentityDynamicsKeepsFirstLatent) {
  Rng rng(2);
  auto batch = random_batch(rng, 4, 3);
  ad::Tape<double> t;
  const auto roll = latent_rollout_with(
      t, batch, 3, [&](const ad::Var<double>& o) { return ad::scale(o, 2.0); },
      [&](const ad::Var<double>& z, const ad::Var<double>&) { return std::make_pair(z, ad::slice_cols(z, 0, 1)); });
  ASSERT_EQ(roll.z.size(), 4u);
  ASSERT_EQ(roll.r.size(), 4u);
  for (const auto& z : roll.z) EXPECT_EQ(z.value(), roll.z[0].value());
}

TEST(LatentRollout, MatchesHandUnroll) {
  Rng rng(3);
  auto h = make_heads<double>(small_cfg(), rng);
  auto batch = random_batch(rng, 4, 5);
  ad::Tape<double> t;
  const auto roll = latent_rollout(t, h, batch, 3);
  M z = encode(h, batch.obs[0]);
  for (int k = 0; k <= 3; ++k) {
    EXPECT_LE((roll.z[k].value() - z).cwiseAbs().maxCoeff(), 1e-13) << k;
    const auto [zn, r] = dynamics_step(h, z, batch.actions[k]);
    EXPECT_LE((roll.r[k].value() - r).cwiseAbs().maxCoeff(), 1e-13) << k;
    z = zn;
  }
}

TEST(LatentRollout, ShortSegmentRejected) {
  Rng rng(4);
  auto h = make_heads<double>(small_cfg(), rng);
  auto batch = random_batch(rng, 3, 2);
  ad::Tape<double> t;
  EXPECT_THROW(latent_rollout(t, h, batch, 3), ConfigError);
}

TEST(ModelLoss, PerfectPredictionsGiveClosedForm) {
  // Stub rollout equal to the targets and rewards: loss = -(1 - rho^(H+1)) / (1 - rho).
  Rng rng(5);
  auto batch = random_batch(rng, 6, 4);
  ad::Tape<double> t;
  Rollout<double> roll;
  std::vector<M> targets;
  for (int h = 0; h <= 5; ++h) {
    targets.push_back(random_matrix(rng, 4, 3));
    roll.z.push_back(t.constant(targets.back()));
    roll.r.push_back(t.constant(batch.rewards[h]));
  }
  ModelLossConfig cfg;
  const auto l = model_loss_from(t, roll, targets, batch, cfg);
  EXPECT_NEAR(l.total.value()(0, 0), -4.68559, 1e-5);
  EXPECT_NEAR(l.total.value()(0, 0), -(1 - std::pow(0.9, 6)) / 0.1, 1e-12);
  EXPECT_NEAR(l.reward, 0.0, 1e-15);

  cfg.latent_loss = LatentLoss::none;
  EXPECT_EQ(model_loss_from(t, roll, targets, batch, cfg).total.value()(0, 0), 0.0);
}

TEST(ModelLoss, MatchesIndependentRecomputation) {
  Rng rng(6);
  auto h = make_heads<double>(small_cfg(), rng);
  // Drift the momentum encoder so targets differ from online encodings.
  for (auto& [path, p] : h.params.entries()) {
    if (path.starts_with("encoder_target.")) p.value += 0.1 * random_matrix(rng, p.value.rows(), p.value.cols());
  }
  auto batch = random_batch(rng, 3, 6);
  const double rho = 0.9;
  for (LatentLoss mode : {LatentLoss::cosine, LatentLoss::mse, LatentLoss::none}) {
    ModelLossConfig cfg;
    cfg.horizon = 2;
    cfg.reward_coef = 0.7;
    cfg.consistency_coef = 1.3;
    cfg.latent_loss = mode;
    ad::Tape<double> t;
    const auto l = model_loss(t, h, batch, cfg);

    double expect = 0, rsum = 0, csum = 0, max_abs = 0;
    M z = encode(h, batch.obs[0]);
    for (int k = 0; k <= 2; ++k) {
      const double w = std::pow(rho, k);
      const auto [zn, r] = dynamics_step(h, z, batch.actions[k]);
      const double rmse = (r - batch.rewards[k]).array().square().mean();
      const M tgt = encode_target(h, batch.obs[k]);
      double lz = 0;
      if (mode == LatentLoss::cosine) {
        for (Eigen::Index i = 0; i < z.rows(); ++i) lz -= row_cos(z, tgt, i);
        lz /= static_cast<double>(z.rows());
      } else if (mode == LatentLoss::mse) {
        lz = (z - tgt).array().square().mean();
      }
      rsum += w * rmse;
      csum += w * lz;
      expect += w * (0.7 * rmse + 1.3 * lz);
      max_abs = std::max(max_abs, z.cwiseAbs().maxCoeff());
      z = zn;
    }
    EXPECT_NEAR(l.total.value()(0, 0), expect, 1e-12) << latent_loss_name(mode);
    EXPECT_NEAR(l.reward, rsum, 1e-12);
    EXPECT_NEAR(l.consistency, csum, 1e-12);
    EXPECT_DOUBLE_EQ(l.max_abs, max_abs);
  }
}

TEST(ModelLoss, GradientsMatchFiniteDifferencesInEveryMode) {
  for (LatentLoss mode : {LatentLoss::cosine, LatentLoss::mse, LatentLoss::none}) {
    Rng rng(7);
    auto h = make_heads<double>(HeadsConfig{3, 2, 4, {6}, false}, rng);
    auto batch = random_batch(rng, 3, 4);
    ModelLossConfig cfg;
    cfg.horizon = 2;
    cfg.latent_loss = mode;
    const auto res = fd::check(
        h.params, [&](ad::Tape<double>& t, ParamSet<double>&) { return model_loss(t, h, batch, cfg).total; },
        {"encoder.", "dynamics."});
    EXPECT_GT(res.analytic_norm, 0.0) << latent_loss_name(mode);
    EXPECT_LE(res.rel_error, 1e-5) << latent_loss_name(mode);
  }
}

TEST(ModelLoss, NoGradientReachesMomentumEncoder) {
  Rng rng(8);
  auto h = make_heads<double>(small_cfg(), rng);
  auto batch = random_batch(rng, 6, 4);
  ad::Tape<double> t;
  backward(t, model_loss(t, h, batch, ModelLossConfig{}).total, h.params);
  for (const auto& [path, p] : h.params.entries()) {
    if (path.starts_with("encoder_target.")) EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << path;
  }
}

TEST(ModelLoss, ZeroConsistencyCoefRemovesLatentGradient) {
  // With reward_coef 0 as well, every gradient is exactly zero.
  Rng rng(9);
  auto h = make_heads<double>(small_cfg(), rng);
  auto batch = random_batch(rng, 6, 4);
  ModelLossConfig cfg;
  cfg.reward_coef = 0;
  cfg.consistency_coef = 0;
  ad::Tape<double> t;
  const auto l = model_loss(t, h, batch, cfg);
  EXPECT_EQ(l.total.value()(0, 0), 0.0);
  EXPECT_LT(l.consistency, 0.0);  // still reported
  backward(t, l.total, h.params);
  for (const auto& [path, p] : h.params.entries()) EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << path;

  const auto before = h.params;
  model_update(h, batch, cfg, 1e-3, 0.005);
  for (const auto& [path, p] : h.params.entries()) {
    if (path.starts_with("encoder_target.")) {
      // EMA between equal tensors can round in the last bit.
      EXPECT_LE((p.value - before.at(path).value).cwiseAbs().maxCoeff(), 1e-15) << path;
    } else {
      EXPECT_EQ(p.value, before.at(path).value) << path;
    }
  }
}

TEST(ModelLoss, ConfigValidation) {
  ModelLossConfig c;
  c.horizon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.rollout_discount = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.reward_coef = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_latent_loss("l1"), ConfigError);
  EXPECT_EQ(parse_latent_loss("mse"), LatentLoss::mse);
}

TEST(ModelUpdate, TouchesOnlyEncoderAndDynamicsThenMomentum) {
  Rng rng(10);
  auto h = make_heads<double>(HeadsConfig{3, 2, 4, {8}, true}, rng);
  auto batch = random_batch(rng, 6, 8);
  const auto before = h.params;
  const auto st = model_update(h, batch, ModelLossConfig{}, 1e-3, 0.005);
  EXPECT_TRUE(std::isfinite(st.total));
  for (const auto& [path, p] : h.params.entries()) {
    const bool moved = p.value != before.at(path).value;
    const bool trained = path.starts_with("encoder.") || path.starts_with("dynamics.");
    if (trained) {
      EXPECT_EQ(p.adam_t, 1) << path;
    } else {
      EXPECT_EQ(p.adam_t, 0) << path;
    }
    if (path.starts_with("encoder_target.")) {
      EXPECT_TRUE(moved) << path;
    } else if (!trained) {
      EXPECT_FALSE(moved) << path;
    }
  }
}

TEST(ModelUpdate, LossFallsOnLinearDynamicsData) {
  // o' = A o + B a, r = c.o, with a fixed dataset of segments.
  Rng rng(11);
  const M A = 0.9 * M::Identity(3, 3) + 0.05 * random_matrix(rng, 3, 3);
  const M B = random_matrix(rng, 2, 3);
  const M c = random_matrix(rng, 3, 1);
  SegmentBatch<double> batch;
  const int n = 64, steps = 6;
  batch.obs.push_back(random_matrix(rng, n, 3));
  for (int h = 0; h < steps; ++h) {
    batch.actions.push_back(random_matrix(rng, n, 2));
    batch.rewards.push_back(batch.obs.back() * c);
    batch.obs.push_back(batch.obs.back() * A + batch.actions.back() * B);
  }
  auto h = make_heads<double>(HeadsConfig{3, 2, 8, {32, 32}, false}, rng);
  ModelLossConfig cfg;
  cfg.latent_loss = LatentLoss::mse;
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) losses.push_back(model_update(h, batch, cfg, 1e-3, 0.005).reward);
  auto window = [&](int from) {
    double s = 0;
    for (int i = from; i < from + 10; ++i) s += losses[i];
    return s / 10;
  };
  EXPECT_LT(window(90), window(0));
  EXPECT_LT(window(90), window(45));
  EXPECT_LT(window(45), window(0));
}
