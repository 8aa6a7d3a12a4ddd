#pragma once

// Deterministic classic-control tasks with rewards in [0, 1] per physics step
// and 1000-step episodes, so the best possible episode return is 1000.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/core.hpp"

namespace tcrl::envs {

enum class Task { pendulum_swingup, cartpole_balance, cartpole_swingup, pointmass_reacher };

inline constexpr std::array<Task, 4> kAllTasks = {Task::pendulum_swingup, Task::cartpole_balance, Task::cartpole_swingup,
                                                  Task::pointmass_reacher};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::pendulum_swingup:
      return "pendulum_swingup";
    case Task::cartpole_balance:
      return "cartpole_balance";
    case Task::cartpole_swingup:
      return "cartpole_swingup";
    case Task::pointmass_reacher:
      return "pointmass_reacher";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw UsageError("unknown task '" + std::string(name) +
                   "' (expected pendulum_swingup, cartpole_balance, cartpole_swingup or pointmass_reacher)");
}

inline std::size_t obs_dim(Task t) {
  switch (t) {
    case Task::pendulum_swingup:
      return 3;
    case Task::cartpole_balance:
    case Task::cartpole_swingup:
      return 5;
    case Task::pointmass_reacher:
      return 6;
  }
  return 0;
}

inline std::size_t act_dim(Task t) { return t == Task::pointmass_reacher ? 2 : 1; }

struct PhysicsParams {
  double dt = 0.02;
  int substeps = 4;  // semi-implicit Euler substeps per dt
  int episode_length = 1000;
  double gravity = 9.81;

  // Pendulum: uniform rod pivoting at one end, theta = 0 upright.
  double pendulum_mass = 1.0;
  double pendulum_length = 1.0;
  double pendulum_torque = 2.0;
  double pendulum_damping = 0.05;

  // Cartpole: uniform pole, length given as pivot-to-center distance.
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double cart_force = 10.0;

  // Point mass in a walled square arena.
  double point_mass = 1.0;
  double point_force = 1.0;
  double point_damping = 0.5;
  double arena_half_width = 0.3;
  double goal_sigma = 0.1;
};

struct EnvState {
  Task task = Task::pendulum_swingup;
  std::vector<double> q;     // pendulum {theta, omega}; cartpole {x, xdot, theta, thetadot}; pointmass {px, py, vx, vy}
  std::vector<double> goal;  // pointmass only
  int step = 0;
  PhysicsParams physics;

  bool done() const { return step >= physics.episode_length; }
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

inline std::vector<double> observe(const EnvState& s) {
  switch (s.task) {
    case Task::pendulum_swingup:
      return {std::cos(s.q[0]), std::sin(s.q[0]), s.q[1]};
    case Task::cartpole_balance:
    case Task::cartpole_swingup:
      return {s.q[0], s.q[1], std::cos(s.q[2]), std::sin(s.q[2]), s.q[3]};
    case Task::pointmass_reacher:
      return {s.q[0], s.q[1], s.q[2], s.q[3], s.goal[0] - s.q[0], s.goal[1] - s.q[1]};
  }
  return {};
}

/// Reward of being in `s`; a step's reward is this value at the post-step state.
inline double state_reward(const EnvState& s) {
  switch (s.task) {
    case Task::pendulum_swingup:
      return 0.5 * (1.0 + std::cos(s.q[0]));
    case Task::cartpole_balance:
    case Task::cartpole_swingup: {
      const double upright = 0.5 * (1.0 + std::cos(s.q[2]));
      // Gaussian tolerance on cart position: 1 at the center, 0.1 at |x| = 2.
      const double centered = std::pow(0.1, (s.q[0] / 2.0) * (s.q[0] / 2.0));
      return upright * 0.5 * (1.0 + centered);
    }
    case Task::pointmass_reacher: {
      const double dx = s.q[0] - s.goal[0], dy = s.q[1] - s.goal[1];
      const double d2 = (dx * dx + dy * dy) / (s.physics.goal_sigma * s.physics.goal_sigma);
      return std::exp(-0.5 * d2);
    }
  }
  return 0.0;
}

/// Total mechanical energy of the pendulum (used for conservation checks).
inline double pendulum_energy(const EnvState& s) {
  const auto& p = s.physics;
  const double inertia = p.pendulum_mass * p.pendulum_length * p.pendulum_length / 3.0;
  return 0.5 * inertia * s.q[1] * s.q[1] + p.pendulum_mass * p.gravity * 0.5 * p.pendulum_length * std::cos(s.q[0]);
}

namespace detail {

inline double pendulum_accel(const PhysicsParams& p, double theta, double omega, double u) {
  const double inertia = p.pendulum_mass * p.pendulum_length * p.pendulum_length / 3.0;
  const double torque = p.pendulum_mass * p.gravity * 0.5 * p.pendulum_length * std::sin(theta) + p.pendulum_torque * u -
                        p.pendulum_damping * omega;
  return torque / inertia;
}

/// Cart-pole with a uniform pole of half length l (classic Barto et al. form).
inline void cartpole_accel(const PhysicsParams& p, const std::vector<double>& q, double u, double& xacc, double& thacc) {
  const double l = p.pole_half_length;
  const double total = p.cart_mass + p.pole_mass;
  const double st = std::sin(q[2]), ct = std::cos(q[2]);
  const double tmp = (p.cart_force * u + p.pole_mass * l * q[3] * q[3] * st) / total;
  thacc = (p.gravity * st - ct * tmp) / (l * (4.0 / 3.0 - p.pole_mass * ct * ct / total));
  xacc = tmp - p.pole_mass * l * thacc * ct / total;
}

inline void integrate(EnvState& s, std::span<const double> u) {
  const auto& p = s.physics;
  const double h = p.dt / p.substeps;
  for (int k = 0; k < p.substeps; ++k) {
    switch (s.task) {
      case Task::pendulum_swingup: {
        s.q[1] += h * pendulum_accel(p, s.q[0], s.q[1], u[0]);
        s.q[0] += h * s.q[1];
        break;
      }
      case Task::cartpole_balance:
      case Task::cartpole_swingup: {
        double xacc = 0, thacc = 0;
        cartpole_accel(p, s.q, u[0], xacc, thacc);
        s.q[1] += h * xacc;
        s.q[3] += h * thacc;
        s.q[0] += h * s.q[1];
        s.q[2] += h * s.q[3];
        break;
      }
      case Task::pointmass_reacher: {
        for (int d = 0; d < 2; ++d) {
          s.q[2 + d] += h * (p.point_force * u[d] / p.point_mass - p.point_damping * s.q[2 + d]);
          s.q[d] += h * s.q[2 + d];
          if (std::abs(s.q[d]) > p.arena_half_width) {
            s.q[d] = std::copysign(p.arena_half_width, s.q[d]);
            s.q[2 + d] = 0.0;
          }
        }
        break;
      }
    }
  }
}

}  // namespace detail

inline EnvState make_env(Task task, std::uint64_t seed, const PhysicsParams& physics = {}) {
  if (physics.dt <= 0 || physics.substeps < 1 || physics.episode_length < 1) throw ConfigError("invalid physics parameters");
  Rng rng = Rng::substream(seed, "env-init");
  EnvState s;
  s.task = task;
  s.physics = physics;
  switch (task) {
    case Task::pendulum_swingup:
      s.q = {std::numbers::pi + rng.uniform(-0.1, 0.1), 0.0};
      break;
    case Task::cartpole_swingup:
      s.q = {0.01 * rng.normal(), 0.01 * rng.normal(), std::numbers::pi + 0.01 * rng.normal(), 0.01 * rng.normal()};
      break;
    case Task::cartpole_balance:
      s.q = {0.01 * rng.normal(), 0.01 * rng.normal(), 0.01 * rng.normal(), 0.01 * rng.normal()};
      break;
    case Task::pointmass_reacher: {
      const double w = 0.7 * physics.arena_half_width;
      s.q = {rng.uniform(-w, w), rng.uniform(-w, w), 0.0, 0.0};
      s.goal = {rng.uniform(-w, w), rng.uniform(-w, w)};
      break;
    }
  }
  return s;
}

inline StepResult env_step(EnvState& s, std::span<const double> action) {
  if (s.done()) throw UsageError("env_step: episode already finished");
  const std::size_t na = act_dim(s.task);
  if (action.size() != na) {
    throw ConfigError("env_step: action has " + std::to_string(action.size()) + " dims, task " +
                      std::string(task_name(s.task)) + " expects " + std::to_string(na));
  }
  std::array<double, 2> u{};
  for (std::size_t i = 0; i < na; ++i) u[i] = std::clamp(action[i], -1.0, 1.0);
  detail::integrate(s, std::span<const double>(u.data(), na));
  s.step += 1;
  return {observe(s), state_reward(s), s.done()};
}

/// Applies `action` `repeat` times, summing rewards; stops early at the time limit.
inline StepResult action_repeat_step(EnvState& s, std::span<const double> action, int repeat) {
  if (repeat < 1) throw ConfigError("action_repeat_step: repeat must be >= 1");
  StepResult out;
  for (int i = 0; i < repeat; ++i) {
    StepResult r = env_step(s, action);
    out.reward += r.reward;
    out.obs = std::move(r.obs);
    out.done = r.done;
    if (r.done) break;
  }
  return out;
}

/// One trajectory-dump row: {t, obs, action, reward}.
inline void write_trajectory_row(std::ostream& os, std::int64_t t, std::span<const double> obs,
                                 std::span<const double> action, double reward) {
  nlohmann::json row;
  row["t"] = t;
  row["obs"] = std::vector<double>(obs.begin(), obs.end());
  row["action"] = std::vector<double>(action.begin(), action.end());
  row["reward"] = reward;
  os << row.dump() << '\n';
}

}  // namespace tcrl::envs
