#pragma once

#include <algorithm>
#include <cmath>
#include <regex>
#include <string>
#include <vector>

#include "tcrl/autodiff.hpp"
#include "tcrl/networks.hpp"
#include "tcrl/params.hpp"
#include "tcrl/replay.hpp"

namespace tcrl {

/// Linearly decayed exploration std with a clip on the sampled noise.
struct ExplorationSchedule {
  double sigma_start = 1.0;
  double sigma_end = 0.1;
  long long duration_steps = 50000;
  double clip = 0.3;

  void validate() const {
    if (!(sigma_end > 0) || sigma_start < sigma_end) throw ConfigError("schedule: need sigma_start >= sigma_end > 0");
    if (duration_steps <= 0) throw ConfigError("schedule: duration must be > 0");
    if (!(clip > 0)) throw ConfigError("schedule: clip must be > 0");
  }

  /// Parses "Linear(start, end, duration)" with duration in thousands of env steps.
  static ExplorationSchedule parse(const std::string& text, double clip = 0.3) {
    static const std::regex re(R"(\s*[Ll]inear\s*\(\s*([^,\s]+)\s*,\s*([^,\s]+)\s*,\s*([^,\s\)]+)\s*\)\s*)");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw ConfigError("schedule: expected Linear(a,b,c), got '" + text + "'");
    ExplorationSchedule s;
    try {
      s.sigma_start = std::stod(m[1]);
      s.sigma_end = std::stod(m[2]);
      s.duration_steps = std::llround(std::stod(m[3]) * 1000.0);
    } catch (const std::exception&) {
      throw ConfigError("schedule: bad number in '" + text + "'");
    }
    s.clip = clip;
    s.validate();
    return s;
  }

  std::string to_string() const {
    auto fmt = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (s.back() == '.') s.pop_back();
      return s;
    };
    return "Linear(" + fmt(sigma_start) + "," + fmt(sigma_end) + "," + fmt(static_cast<double>(duration_steps) / 1000.0) +
           ")";
  }
};

inline double sigma_at(const ExplorationSchedule& s, long long env_step) {
  if (env_step < 0) throw UsageError("sigma_at: negative step");
  if (env_step >= s.duration_steps) return s.sigma_end;
  const double frac = static_cast<double>(env_step) / static_cast<double>(s.duration_steps);
  return s.sigma_start + frac * (s.sigma_end - s.sigma_start);
}

inline double clipped_noise(Rng& rng, double sigma, double clip) {
  if (sigma <= 0) return 0.0;
  return std::clamp(sigma * rng.normal(), -clip, clip);
}

template <class S>
Matrix<S> clipped_noise_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sigma, double clip) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(clipped_noise(rng, sigma, clip));
  return m;
}

/// clamp(policy_mean(encode(o)) + eps, -1, 1), eps clipped Gaussian per dim.
template <class S>
std::vector<double> explore_action(const ModelHeads<S>& heads, const std::vector<double>& obs, double sigma, double clip,
                                   Rng& rng) {
  if (sigma < 0) throw UsageError("explore_action: sigma must be >= 0");
  const Matrix<S> mu = policy_mean(heads, encode(heads, to_matrix<S>(obs)));
  std::vector<double> a(static_cast<std::size_t>(mu.cols()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::clamp(static_cast<double>(mu(0, static_cast<Eigen::Index>(i))) + clipped_noise(rng, sigma, clip), -1.0, 1.0);
  }
  return a;
}

struct TdConfig {
  double gamma = 0.99;
  int nstep = 3;
  double critic_lr = 3e-4;
  double actor_lr = 3e-4;
  double tau = 0.005;
  double target_noise_clip = 0.3;
  bool critic_updates_encoder = true;

  void validate() const {
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("td: gamma must be in (0, 1)");
    if (nstep < 1) throw ConfigError("td: nstep must be >= 1");
    if (!(critic_lr > 0) || !(actor_lr > 0)) throw ConfigError("td: learning rates must be > 0");
    if (tau < 0 || tau > 1) throw ConfigError("td: tau must be in [0, 1]");
  }
};

/// sum_{h<n} gamma^h r_h + gamma^n * bootstrap, per batch row.
template <class S>
Matrix<S> nstep_return(const std::vector<Matrix<S>>& rewards, int n, double gamma, const Matrix<S>& bootstrap) {
  if (n < 1 || rewards.size() < static_cast<std::size_t>(n)) {
    throw UsageError("nstep_return: need " + std::to_string(n) + " rewards, segment has " + std::to_string(rewards.size()));
  }
  Matrix<S> y = Matrix<S>::Zero(bootstrap.rows(), 1);
  double w = 1.0;
  for (int h = 0; h < n; ++h) {
    y += static_cast<S>(w) * rewards[static_cast<std::size_t>(h)];
    w *= gamma;
  }
  y += static_cast<S>(w) * bootstrap;
  return y;
}

/// Detached n-step double-Q target using the online encoder, a smoothed
/// policy action at o_{t+n}, and the momentum critics.
template <class S>
Matrix<S> nstep_target(const ModelHeads<S>& heads, const SegmentBatch<S>& batch, const TdConfig& cfg, double sigma,
                       Rng& rng) {
  const auto n = static_cast<std::size_t>(cfg.nstep);
  if (batch.steps() < n || batch.obs.size() < n + 1) {
    throw UsageError("nstep_target: segment has " + std::to_string(batch.steps()) + " steps, need " + std::to_string(n));
  }
  const Matrix<S> z = encode(heads, batch.obs[n]);
  Matrix<S> a = policy_mean(heads, z);
  a += clipped_noise_matrix<S>(rng, a.rows(), a.cols(), sigma, cfg.target_noise_clip);
  a = a.cwiseMax(S(-1)).cwiseMin(S(1));
  const auto [q1, q2] = q_values(heads, z, a, true);
  return nstep_return<S>(batch.rewards, cfg.nstep, cfg.gamma, q1.cwiseMin(q2));
}

struct CriticStats {
  double loss = 0.0;
  double q_mean = 0.0;
};

/// Loss of both online critics against a fixed target; `z` may or may not
/// carry gradient back to the encoder.
template <class S>
ad::Var<S> critic_loss(ad::Tape<S>& tape, ModelHeads<S>& heads, const ad::Var<S>& z, const Matrix<S>& actions,
                       const Matrix<S>& target, double* q_mean = nullptr) {
  const auto [q1, q2] = q_values(tape, heads, z, tape.constant(actions));
  const auto y = tape.constant(target);
  if (q_mean) *q_mean = static_cast<double>(q1.value().mean());
  return ad::add(ad::mean(ad::square(ad::sub(q1, y))), ad::mean(ad::square(ad::sub(q2, y))));
}

template <class S>
CriticStats critic_update(ModelHeads<S>& heads, const SegmentBatch<S>& batch, const TdConfig& cfg, double sigma,
                          Rng& rng, const AdamConfig& adam = {}) {
  if (batch.batch() == 0) throw ConfigError("critic_update: empty batch");
  cfg.validate();
  const Matrix<S> y = nstep_target(heads, batch, cfg, sigma, rng);
  ad::Tape<S> tape;
  auto z = encode(tape, heads, tape.constant(batch.obs[0]));
  if (!cfg.critic_updates_encoder) z = ad::detach(z);
  CriticStats st;
  const auto loss = critic_loss(tape, heads, z, batch.actions[0], y, &st.q_mean);
  backward(tape, loss, heads.params);
  adam_step(heads.params, cfg.critic_lr, cfg.critic_updates_encoder ? kCriticEncoderGroup : kCriticGroup, adam);
  update_q_targets(heads, cfg.tau);
  st.loss = static_cast<double>(loss.value()(0, 0));
  return st;
}

/// -mean(min(Q1, Q2)(z, clamp(pi(z) + eps))) for any critic callable
/// critic(z, a) -> (q1, q2) recorded on `tape`.
template <class S, class CriticFn>
ad::Var<S> actor_loss_with(ad::Tape<S>& tape, ModelHeads<S>& heads, const Matrix<S>& z, const Matrix<S>& noise,
                           CriticFn&& critic) {
  const auto zc = tape.constant(z);
  auto a = policy_mean(tape, heads, zc);
  if (noise.size() != 0) a = ad::add(a, tape.constant(noise));
  a = ad::clamp_straight_through(a, S(-1), S(1));
  const auto [q1, q2] = critic(zc, a);
  return ad::scale(ad::mean(ad::minimum(q1, q2)), S(-1));
}

struct ActorStats {
  double loss = 0.0;
};

template <class S, class CriticFn>
ActorStats actor_update_with(ModelHeads<S>& heads, const Matrix<S>& z, const TdConfig& cfg, double sigma, double clip,
                             Rng& rng, CriticFn&& critic, const AdamConfig& adam = {}) {
  ad::Tape<S> tape;
  const Matrix<S> noise = clipped_noise_matrix<S>(rng, z.rows(), static_cast<Eigen::Index>(heads.cfg.act_dim), sigma, clip);
  const auto loss = actor_loss_with(tape, heads, z, noise, [&](const ad::Var<S>& zz, const ad::Var<S>& a) {
    return critic(tape, zz, a);
  });
  backward(tape, loss, heads.params);
  adam_step(heads.params, cfg.actor_lr, kActorGroup, adam);
  return {static_cast<double>(loss.value()(0, 0))};
}

/// Policy step against the online critics; the encoder output is detached and
/// only the policy parameters move.
template <class S>
ActorStats actor_update(ModelHeads<S>& heads, const SegmentBatch<S>& batch, const TdConfig& cfg, double sigma, double clip,
                        Rng& rng, const AdamConfig& adam = {}) {
  if (batch.batch() == 0) throw ConfigError("actor_update: empty batch");
  const Matrix<S> z = encode(heads, batch.obs[0]);
  return actor_update_with(heads, z, cfg, sigma, clip, rng,
                           [&](ad::Tape<S>& tape, const ad::Var<S>& zz, const ad::Var<S>& a) {
                             return q_values(tape, heads, zz, a);
                           },
                           adam);
}

}  // namespace tcrl
