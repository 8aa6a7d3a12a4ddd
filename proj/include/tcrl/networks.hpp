#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tcrl/autodiff.hpp"
#include "tcrl/mlp.hpp"
#include "tcrl/params.hpp"

namespace tcrl {

struct HeadsConfig {
  std::size_t obs_dim = 3;
  std::size_t act_dim = 1;
  std::size_t latent_dim = 50;
  std::vector<std::size_t> hidden_dims{256, 256};
  bool actor_critic = true;  // false: encoder + dynamics only (planning)
};

namespace paths {
inline const std::string encoder = "encoder";
inline const std::string encoder_target = "encoder_target";
inline const std::string dynamics = "dynamics";
inline const std::string q1 = "q1";
inline const std::string q2 = "q2";
inline const std::string q1_target = "q1_target";
inline const std::string q2_target = "q2_target";
inline const std::string policy = "policy";
}  // namespace paths

/// Encoder (theta), momentum encoder (theta-), latent dynamics with a
/// next-latent head and a reward head (phi), double Q (psi1, psi2) with
/// momentum copies, and a tanh policy head (eta), all in one ParamSet.
template <class S>
struct ModelHeads {
  HeadsConfig cfg;
  ParamSet<S> params;
  MlpSpec encoder;
  MlpSpec dynamics;  // output: latent_dim next-latent columns, then 1 reward column
  MlpSpec q;
  MlpSpec policy;
};

inline MlpSpec encoder_spec(const HeadsConfig& c) { return {c.obs_dim, c.hidden_dims, c.latent_dim}; }
inline MlpSpec dynamics_spec(const HeadsConfig& c) { return {c.latent_dim + c.act_dim, c.hidden_dims, c.latent_dim + 1}; }
inline MlpSpec q_spec(const HeadsConfig& c) { return {c.latent_dim + c.act_dim, c.hidden_dims, 1}; }
inline MlpSpec policy_spec(const HeadsConfig& c) {
  return {c.latent_dim, c.hidden_dims, c.act_dim, Activation::elu, Activation::tanh};
}

template <class S>
ModelHeads<S> make_heads(const HeadsConfig& cfg, Rng& rng) {
  if (cfg.obs_dim < 1 || cfg.act_dim < 1 || cfg.latent_dim < 1) throw ConfigError("heads: dims must be >= 1");
  ModelHeads<S> h;
  h.cfg = cfg;
  h.encoder = encoder_spec(cfg);
  h.dynamics = dynamics_spec(cfg);
  h.q = q_spec(cfg);
  h.policy = policy_spec(cfg);
  init_mlp(h.params, paths::encoder, h.encoder, rng);
  init_mlp(h.params, paths::dynamics, h.dynamics, rng);
  clone_params(h.params, paths::encoder + ".", paths::encoder_target + ".");
  if (cfg.actor_critic) {
    init_mlp(h.params, paths::q1, h.q, rng);
    init_mlp(h.params, paths::q2, h.q, rng);
    init_mlp(h.params, paths::policy, h.policy, rng);
    clone_params(h.params, paths::q1 + ".", paths::q1_target + ".");
    clone_params(h.params, paths::q2 + ".", paths::q2_target + ".");
  }
  return h;
}

inline const std::vector<std::string> kModelGroup = {"encoder.", "dynamics."};
inline const std::vector<std::string> kCriticGroup = {"q1.", "q2."};
inline const std::vector<std::string> kCriticEncoderGroup = {"q1.", "q2.", "encoder."};
inline const std::vector<std::string> kActorGroup = {"policy."};

namespace detail {
inline void check_width(Eigen::Index got, std::size_t want, const char* what) {
  if (static_cast<std::size_t>(got) != want) {
    throw ConfigError(std::string(what) + ": got " + std::to_string(got) + " features, expected " + std::to_string(want));
  }
}
}  // namespace detail

// ---- taped -----------------------------------------------------------------

template <class S>
ad::Var<S> encode(ad::Tape<S>& tape, ModelHeads<S>& h, const ad::Var<S>& obs) {
  detail::check_width(obs.cols(), h.cfg.obs_dim, "encode");
  return mlp_forward(tape, h.params, paths::encoder, h.encoder, obs);
}

/// One latent step: (next latent, predicted reward as an n x 1 column).
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> dynamics_step(ad::Tape<S>& tape, ModelHeads<S>& h, const ad::Var<S>& z,
                                                const ad::Var<S>& a) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "dynamics_step latent");
  detail::check_width(a.cols(), h.cfg.act_dim, "dynamics_step action");
  const auto out = mlp_forward(tape, h.params, paths::dynamics, h.dynamics, ad::concat_cols(z, a));
  const auto d = static_cast<Eigen::Index>(h.cfg.latent_dim);
  return {ad::slice_cols(out, 0, d), ad::slice_cols(out, d, 1)};
}

template <class S>
std::pair<ad::Var<S>, ad::Var<S>> q_values(ad::Tape<S>& tape, ModelHeads<S>& h, const ad::Var<S>& z,
                                           const ad::Var<S>& a) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "q_values latent");
  detail::check_width(a.cols(), h.cfg.act_dim, "q_values action");
  const auto za = ad::concat_cols(z, a);
  return {mlp_forward(tape, h.params, paths::q1, h.q, za), mlp_forward(tape, h.params, paths::q2, h.q, za)};
}

template <class S>
ad::Var<S> policy_mean(ad::Tape<S>& tape, ModelHeads<S>& h, const ad::Var<S>& z) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "policy_mean");
  return mlp_forward(tape, h.params, paths::policy, h.policy, z);
}

// ---- frozen inference --------------------------------------------------------

template <class S>
Matrix<S> encode(const ModelHeads<S>& h, const Matrix<S>& obs) {
  detail::check_width(obs.cols(), h.cfg.obs_dim, "encode");
  return mlp_infer(h.params, paths::encoder, h.encoder, obs);
}

/// Momentum-encoder latent; never on a tape, so it carries no gradient.
template <class S>
Matrix<S> encode_target(const ModelHeads<S>& h, const Matrix<S>& obs) {
  detail::check_width(obs.cols(), h.cfg.obs_dim, "encode_target");
  return mlp_infer(h.params, paths::encoder_target, h.encoder, obs);
}

template <class S>
std::pair<Matrix<S>, Matrix<S>> dynamics_step(const ModelHeads<S>& h, const Matrix<S>& z, const Matrix<S>& a) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "dynamics_step latent");
  detail::check_width(a.cols(), h.cfg.act_dim, "dynamics_step action");
  Matrix<S> za(z.rows(), z.cols() + a.cols());
  za.leftCols(z.cols()) = z;
  za.rightCols(a.cols()) = a;
  Matrix<S> out = mlp_infer(h.params, paths::dynamics, h.dynamics, za);
  const auto d = static_cast<Eigen::Index>(h.cfg.latent_dim);
  return {out.leftCols(d), out.rightCols(1)};
}

template <class S>
std::pair<Matrix<S>, Matrix<S>> q_values(const ModelHeads<S>& h, const Matrix<S>& z, const Matrix<S>& a,
                                         bool target = false) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "q_values latent");
  detail::check_width(a.cols(), h.cfg.act_dim, "q_values action");
  Matrix<S> za(z.rows(), z.cols() + a.cols());
  za.leftCols(z.cols()) = z;
  za.rightCols(a.cols()) = a;
  const auto& p1 = target ? paths::q1_target : paths::q1;
  const auto& p2 = target ? paths::q2_target : paths::q2;
  return {mlp_infer(h.params, p1, h.q, za), mlp_infer(h.params, p2, h.q, za)};
}

template <class S>
Matrix<S> policy_mean(const ModelHeads<S>& h, const Matrix<S>& z) {
  detail::check_width(z.cols(), h.cfg.latent_dim, "policy_mean");
  return mlp_infer(h.params, paths::policy, h.policy, z);
}

/// Momentum update of the encoder and, when present, both Q copies.
template <class S>
void update_encoder_target(ModelHeads<S>& h, double tau) {
  ema_update(h.params, paths::encoder_target + ".", paths::encoder + ".", tau);
}

template <class S>
void update_q_targets(ModelHeads<S>& h, double tau) {
  ema_update(h.params, paths::q1_target + ".", paths::q1 + ".", tau);
  ema_update(h.params, paths::q2_target + ".", paths::q2 + ".", tau);
}

template <class S>
Matrix<S> to_matrix(const std::vector<double>& v) {
  Matrix<S> m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<S>(v[i]);
  return m;
}

}  // namespace tcrl
