#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tcrl/core.hpp"
#include "tcrl/envs.hpp"
#include "tcrl/networks.hpp"
#include "tcrl/params.hpp"

namespace tcrl {

struct MppiConfig {
  int horizon = 12;
  int population = 512;
  int elites = 64;
  int iterations = 6;
  double temperature = 0.5;
  double momentum = 0.1;
  bool reuse_solution = true;
  double std_init = 0.5;
  double std_floor = 0.05;

  void validate() const {
    if (horizon < 1) throw ConfigError("mppi: horizon must be >= 1");
    if (population < 1 || elites < 1 || elites > population) throw ConfigError("mppi: need 1 <= elites <= population");
    if (iterations < 1) throw ConfigError("mppi: iterations must be >= 1");
    if (!(temperature > 0)) throw ConfigError("mppi: temperature must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("mppi: momentum must be in [0, 1)");
    if (!(std_init > 0) || std_floor < 0) throw ConfigError("mppi: std_init must be > 0 and std_floor >= 0");
  }
};

/// Per-step Gaussian over action sequences, horizon x act_dim.
struct PlanSolution {
  Matrix<double> mean;
  Matrix<double> std;

  std::size_t horizon() const { return static_cast<std::size_t>(mean.rows()); }
  std::size_t act_dim() const { return static_cast<std::size_t>(mean.cols()); }
};

/// A batched model the planner can roll out: init(obs, n) builds n particles
/// from one observation; step(state, actions, rng) advances all particles
/// in place and returns their predicted rewards as an n x 1 column.
template <class M>
concept RolloutModel = requires(M& m, const std::vector<double>& obs, typename M::State& s, const Matrix<double>& a,
                                Rng& rng) {
  typename M::State;
  { m.init(obs, std::size_t{1}) } -> std::same_as<typename M::State>;
  { m.step(s, a, rng) } -> std::same_as<Matrix<double>>;
  { m.act_dim() } -> std::convertible_to<std::size_t>;
};

/// Undiscounted sum of predicted rewards per candidate; `actions` is
/// time-major, one population x act_dim matrix per step.
template <RolloutModel M>
std::vector<double> score_trajectories(M& model, const std::vector<double>& obs, const std::vector<Matrix<double>>& actions,
                                       Rng& rng) {
  if (actions.empty()) throw ConfigError("score_trajectories: empty horizon");
  const auto n = static_cast<std::size_t>(actions[0].rows());
  auto state = model.init(obs, n);
  Matrix<double> total = Matrix<double>::Zero(static_cast<Eigen::Index>(n), 1);
  for (const auto& a : actions) total += model.step(state, a, rng);
  return std::vector<double>(total.data(), total.data() + total.size());
}

/// Indices of the k largest returns, best first; ties go to the lower index.
inline std::vector<std::size_t> elite_select(const std::vector<double>& returns, std::size_t k) {
  if (k < 1 || k > returns.size()) throw ConfigError("elite_select: need 1 <= k <= population");
  std::vector<std::size_t> idx(returns.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    return returns[a] > returns[b] || (returns[a] == returns[b] && a < b);
  });
  idx.resize(k);
  return idx;
}

inline std::vector<double> softmax_weights(const std::vector<double>& returns, double temperature) {
  if (!(temperature > 0)) throw ConfigError("softmax_weights: temperature must be > 0");
  if (returns.empty()) return {};
  const double mx = *std::max_element(returns.begin(), returns.end());
  std::vector<double> w(returns.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp((returns[i] - mx) / temperature);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

inline PlanSolution fresh_solution(const MppiConfig& cfg, std::size_t act_dim) {
  const auto h = static_cast<Eigen::Index>(cfg.horizon), a = static_cast<Eigen::Index>(act_dim);
  return {Matrix<double>::Zero(h, a), Matrix<double>::Constant(h, a, cfg.std_init)};
}

/// Warm start for the next decision: mean shifted left one step with a zero
/// tail, std reset.
inline PlanSolution shift_solution(const PlanSolution& s, const MppiConfig& cfg) {
  PlanSolution out = fresh_solution(cfg, s.act_dim());
  const Eigen::Index keep = std::min<Eigen::Index>(s.mean.rows() - 1, out.mean.rows());
  if (keep > 0) out.mean.topRows(keep) = s.mean.middleRows(1, keep);
  return out;
}

template <RolloutModel M>
PlanSolution mppi_iterate(M& model, const std::vector<double>& obs, const PlanSolution& sol, const MppiConfig& cfg,
                          Rng& rng) {
  const auto H = sol.mean.rows(), A = sol.mean.cols();
  const auto N = static_cast<Eigen::Index>(cfg.population);
  std::vector<Matrix<double>> actions(static_cast<std::size_t>(H), Matrix<double>(N, A));
  for (Eigen::Index h = 0; h < H; ++h) {
    auto& m = actions[static_cast<std::size_t>(h)];
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index j = 0; j < A; ++j) {
        m(i, j) = std::clamp(sol.mean(h, j) + sol.std(h, j) * rng.normal(), -1.0, 1.0);
      }
    }
  }
  const auto returns = score_trajectories(model, obs, actions, rng);
  const auto elite = elite_select(returns, static_cast<std::size_t>(cfg.elites));
  std::vector<double> elite_returns;
  for (auto i : elite) elite_returns.push_back(returns[i]);
  const auto w = softmax_weights(elite_returns, cfg.temperature);

  PlanSolution next{Matrix<double>::Zero(H, A), Matrix<double>::Zero(H, A)};
  for (std::size_t k = 0; k < elite.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(elite[k]);
    for (Eigen::Index h = 0; h < H; ++h) next.mean.row(h) += w[k] * actions[static_cast<std::size_t>(h)].row(row);
  }
  for (std::size_t k = 0; k < elite.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(elite[k]);
    for (Eigen::Index h = 0; h < H; ++h) {
      next.std.row(h) += w[k] * (actions[static_cast<std::size_t>(h)].row(row) - next.mean.row(h)).cwiseAbs2();
    }
  }
  next.std = next.std.cwiseSqrt();
  next.mean = cfg.momentum * sol.mean + (1.0 - cfg.momentum) * next.mean;
  next.std = (cfg.momentum * sol.std + (1.0 - cfg.momentum) * next.std).cwiseMax(cfg.std_floor);
  return next;
}

struct PlanResult {
  std::vector<double> action;
  PlanSolution solution;
};

/// Runs the configured iterations and returns the first mean action. With
/// reuse enabled and a previous solution, that solution is shifted to warm
/// start this call.
template <RolloutModel M>
PlanResult plan_action(M& model, const std::vector<double>& obs, const PlanSolution* prev, const MppiConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  PlanSolution sol = (cfg.reuse_solution && prev && prev->mean.size() != 0) ? shift_solution(*prev, cfg)
                                                                            : fresh_solution(cfg, model.act_dim());
  for (int j = 0; j < cfg.iterations; ++j) sol = mppi_iterate(model, obs, sol, cfg, rng);
  PlanResult out;
  out.action.resize(sol.act_dim());
  for (std::size_t j = 0; j < out.action.size(); ++j) {
    out.action[j] = std::clamp(sol.mean(0, static_cast<Eigen::Index>(j)), -1.0, 1.0);
  }
  out.solution = std::move(sol);
  return out;
}

// ---- rollout models ----------------------------------------------------------

/// Ground-truth dynamics: every particle is a copy of the real environment.
class SimulatorModel {
 public:
  using State = std::vector<envs::EnvState>;

  SimulatorModel(envs::EnvState env, int action_repeat) : env_(std::move(env)), repeat_(action_repeat) {
    if (repeat_ < 1) throw ConfigError("simulator model: action_repeat must be >= 1");
  }

  void set_state(const envs::EnvState& env) { env_ = env; }
  std::size_t act_dim() const { return envs::act_dim(env_.task); }

  State init(const std::vector<double>&, std::size_t n) const {
    envs::EnvState copy = env_;
    // Rollouts may run past the episode end; the time limit is irrelevant here.
    copy.step = 0;
    copy.physics.episode_length = 1 << 30;
    return State(n, copy);
  }

  Matrix<double> step(State& s, const Matrix<double>& a, Rng&) const {
    Matrix<double> r(static_cast<Eigen::Index>(s.size()), 1);
    std::vector<double> u(static_cast<std::size_t>(a.cols()));
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = 0; j < u.size(); ++j) u[j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      r(static_cast<Eigen::Index>(i), 0) = envs::action_repeat_step(s[i], u, repeat_).reward;
    }
    return r;
  }

 private:
  envs::EnvState env_;
  int repeat_;
};

/// Learned latent dynamics: encode once, then step the dynamics head.
template <class S>
class LatentModel {
 public:
  using State = Matrix<S>;

  explicit LatentModel(const ModelHeads<S>& heads) : heads_(&heads) {}

  std::size_t act_dim() const { return heads_->cfg.act_dim; }

  State init(const std::vector<double>& obs, std::size_t n) const {
    const Matrix<S> z = encode(*heads_, to_matrix<S>(obs));
    return z.replicate(static_cast<Eigen::Index>(n), 1);
  }

  Matrix<double> step(State& z, const Matrix<double>& a, Rng&) const {
    auto [zn, r] = dynamics_step(*heads_, z, Matrix<S>(a.cast<S>()));
    z = std::move(zn);
    return r.template cast<double>();
  }

 private:
  const ModelHeads<S>* heads_;
};

}  // namespace tcrl
