#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tcrl/envs.hpp"

using namespace tcrl;
using namespace tcrl::envs;

namespace {

EnvState pendulum_at(double theta, double omega) {
  auto s = make_env(Task::pendulum_swingup, 0);
  s.q = {theta, omega};
  return s;
}

// Fine-step reference: RK4 on the same rod equations with dt/100 sub-steps.
std::array<double, 2> fine_pendulum(const PhysicsParams& p, double th, double w, double u, double dt) {
  const double inertia = p.pendulum_mass * p.pendulum_length * p.pendulum_length / 3.0;
  auto acc = [&](double t, double v) {
    return (p.pendulum_mass * p.gravity * 0.5 * p.pendulum_length * std::sin(t) + p.pendulum_torque * u -
            p.pendulum_damping * v) /
           inertia;
  };
  const int n = 100;
  const double h = dt / n;
  for (int i = 0; i < n; ++i) {
    const double k1t = w, k1w = acc(th, w);
    const double k2t = w + 0.5 * h * k1w, k2w = acc(th + 0.5 * h * k1t, w + 0.5 * h * k1w);
    const double k3t = w + 0.5 * h * k2w, k3w = acc(th + 0.5 * h * k2t, w + 0.5 * h * k2w);
    const double k4t = w + h * k3w, k4w = acc(th + h * k3t, w + h * k3w);
    th += h / 6 * (k1t + 2 * k2t + 2 * k3t + k4t);
    w += h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w);
  }
  return {th, w};
}

}  // namespace

TEST(Envs, PendulumStartsNearHangingAndIsSeeded) {
  const auto a = make_env(Task::pendulum_swingup, 7);
  const auto b = make_env(Task::pendulum_swingup, 7);
  const auto c = make_env(Task::pendulum_swingup, 8);
  EXPECT_NEAR(a.q[0], std::numbers::pi, 0.1 + 1e-12);
  EXPECT_EQ(observe(a), observe(b));
  EXPECT_NE(a.q[0], c.q[0]);
  EXPECT_EQ(a.physics.episode_length, 1000);
}

TEST(Envs, DifferentSeedsGiveDifferentStartsForEveryTask) {
  for (Task t : kAllTasks) {
    EXPECT_NE(observe(make_env(t, 1)), observe(make_env(t, 2))) << task_name(t);
    EXPECT_EQ(observe(make_env(t, 1)).size(), obs_dim(t));
  }
}

TEST(Envs, PendulumRewardClosedForms) {
  EXPECT_NEAR(state_reward(pendulum_at(std::numbers::pi, 0)), 0.0, 1e-15);
  EXPECT_EQ(state_reward(pendulum_at(0.0, 0.0)), 1.0);
  // Stepping from hanging straight down with no push stays at ~0 reward.
  auto s = pendulum_at(std::numbers::pi, 0);
  const double a[1] = {0.0};
  EXPECT_NEAR(env_step(s, a).reward, 0.0, 1e-12);
}

TEST(Envs, PendulumStepMatchesFineIntegrator) {
  for (double u : {0.0, 1.0}) {
    auto s = pendulum_at(std::numbers::pi / 2, 0.0);
    const double a[1] = {u};
    env_step(s, a);
    const auto ref = fine_pendulum(s.physics, std::numbers::pi / 2, 0.0, u, s.physics.dt);
    EXPECT_NEAR(s.q[0], ref[0], 1e-3 * std::abs(ref[0]));
    EXPECT_NEAR(s.q[1], ref[1], 1e-3 * std::abs(ref[1]));
  }
}

TEST(Envs, PendulumConservesEnergyWithoutDamping) {
  PhysicsParams p;
  p.pendulum_damping = 0.0;
  auto s = make_env(Task::pendulum_swingup, 0, p);
  s.q = {std::numbers::pi / 2, 0.0};
  const double e0 = pendulum_energy(s);
  const double a[1] = {0.0};
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    env_step(s, a);
    worst = std::max(worst, std::abs(pendulum_energy(s) - e0));
  }
  // Energy at the start is m g l/2 * cos(pi/2) = 0, so compare against the swing amplitude scale.
  const double scale = s.physics.pendulum_mass * s.physics.gravity * 0.5 * s.physics.pendulum_length;
  EXPECT_LE(worst, 0.01 * scale);
}

TEST(Envs, ActionRepeatSumsRewardsAndMatchesSingleSteps) {
  auto a = make_env(Task::cartpole_swingup, 3);
  auto b = a;
  const double act[1] = {0.4};
  const auto r1 = action_repeat_step(a, act, 1);
  const auto s1 = env_step(b, act);
  EXPECT_EQ(r1.obs, s1.obs);
  EXPECT_EQ(r1.reward, s1.reward);

  auto c = make_env(Task::pendulum_swingup, 3);
  auto d = c;
  const auto r2 = action_repeat_step(c, act, 2);
  const double x = env_step(d, act).reward;
  const double y = env_step(d, act).reward;
  EXPECT_DOUBLE_EQ(r2.reward, x + y);
  EXPECT_EQ(c.q, d.q);
}

TEST(Envs, EpisodeOfRepeatTwoHas500DecisionsAndFullReturn) {
  auto s = make_env(Task::pendulum_swingup, 4);
  auto ref = s;
  Rng rng(1);
  int decisions = 0;
  double ret = 0, ref_ret = 0;
  bool done = false;
  while (!done) {
    const double act[1] = {rng.uniform(-1, 1)};
    const auto r = action_repeat_step(s, act, 2);
    ret += r.reward;
    done = r.done;
    ++decisions;
    for (int k = 0; k < 2; ++k) ref_ret += env_step(ref, act).reward;
  }
  EXPECT_EQ(decisions, 500);
  EXPECT_EQ(s.step, 1000);
  EXPECT_NEAR(ret, ref_ret, 1e-9);
  EXPECT_GE(ret, 0.0);
  EXPECT_LE(ret, 1000.0);
}

TEST(Envs, RewardsStayInUnitIntervalAndActionsAreClipped) {
  for (Task t : kAllTasks) {
    auto s = make_env(t, 5);
    auto clipped = s;
    Rng rng(2);
    while (!s.done()) {
      std::vector<double> act(act_dim(t)), inb(act_dim(t));
      for (std::size_t i = 0; i < act.size(); ++i) {
        act[i] = rng.uniform(-3, 3);
        inb[i] = std::clamp(act[i], -1.0, 1.0);
      }
      const auto r = env_step(s, act);
      env_step(clipped, inb);
      ASSERT_GE(r.reward, 0.0) << task_name(t);
      ASSERT_LE(r.reward, 1.0) << task_name(t);
    }
    EXPECT_EQ(s.q, clipped.q) << task_name(t);
  }
}

TEST(Envs, DeterministicTrajectories) {
  auto run = [] {
    auto s = make_env(Task::cartpole_swingup, 11);
    Rng rng(3);
    std::vector<double> trace;
    for (int i = 0; i < 300; ++i) {
      const double act[1] = {rng.uniform(-1, 1)};
      const auto r = env_step(s, act);
      trace.insert(trace.end(), r.obs.begin(), r.obs.end());
      trace.push_back(r.reward);
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Envs, ErrorsOnFinishedEpisodeBadActionAndUnknownTask) {
  auto s = make_env(Task::pendulum_swingup, 0);
  const double a[1] = {0.0};
  s.step = s.physics.episode_length;
  EXPECT_THROW(env_step(s, a), UsageError);
  auto p = make_env(Task::pointmass_reacher, 0);
  EXPECT_THROW(env_step(p, a), ConfigError);
  EXPECT_THROW(parse_task("humanoid_run"), UsageError);
  EXPECT_THROW(action_repeat_step(p, a, 0), ConfigError);
}

TEST(Envs, CartpoleRewardGate) {
  auto s = make_env(Task::cartpole_balance, 0);
  s.q = {0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(state_reward(s), 1.0);
  s.q = {2.0, 0, 0, 0};
  EXPECT_NEAR(state_reward(s), 0.55, 1e-12);
  s.q = {0, 0, std::numbers::pi, 0};
  EXPECT_NEAR(state_reward(s), 0.0, 1e-15);
}
