#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tcrl/autodiff.hpp"
#include "tcrl/networks.hpp"
#include "tcrl/params.hpp"
#include "tcrl/replay.hpp"

namespace tcrl {

enum class LatentLoss { cosine, mse, none };

inline std::string_view latent_loss_name(LatentLoss l) {
  switch (l) {
    case LatentLoss::cosine:
      return "cosine";
    case LatentLoss::mse:
      return "mse";
    case LatentLoss::none:
      return "none";
  }
  return "?";
}

inline LatentLoss parse_latent_loss(std::string_view s) {
  if (s == "cosine") return LatentLoss::cosine;
  if (s == "mse") return LatentLoss::mse;
  if (s == "none") return LatentLoss::none;
  throw ConfigError("latent_loss must be cosine, mse or none (got '" + std::string(s) + "')");
}

struct ModelLossConfig {
  int horizon = 5;
  double rollout_discount = 0.9;
  double reward_coef = 1.0;
  double consistency_coef = 1.0;
  LatentLoss latent_loss = LatentLoss::cosine;

  void validate() const {
    if (horizon < 1) throw ConfigError("model loss: horizon must be >= 1");
    if (!(rollout_discount > 0 && rollout_discount <= 1)) throw ConfigError("model loss: rollout_discount must be in (0, 1]");
    if (reward_coef < 0 || consistency_coef < 0) throw ConfigError("model loss: coefficients must be >= 0");
  }
};

template <class S>
struct Rollout {
  std::vector<ad::Var<S>> z;  // z_0 .. z_H
  std::vector<ad::Var<S>> r;  // r_0 .. r_H, n x 1 each
};

/// Unrolls `horizon` steps from the first observation of `batch`, given
/// encode(obs) -> z and step(z, a) -> (z', r) callables.
template <class S, class EncodeFn, class StepFn>
Rollout<S> latent_rollout_with(ad::Tape<S>& tape, const SegmentBatch<S>& batch, int horizon, EncodeFn&& encode_fn,
                               StepFn&& step_fn) {
  const auto H = static_cast<std::size_t>(horizon);
  if (horizon < 1 || batch.steps() < H + 1 || batch.obs.size() < H + 1) {
    throw ConfigError("latent_rollout: segment has " + std::to_string(batch.steps()) + " steps, need " +
                      std::to_string(H + 1));
  }
  if (batch.batch() == 0) throw ConfigError("latent_rollout: empty batch");
  Rollout<S> out;
  out.z.push_back(encode_fn(tape.constant(batch.obs[0])));
  for (std::size_t h = 0; h <= H; ++h) {
    auto [zn, rh] = step_fn(out.z.back(), tape.constant(batch.actions[h]));
    out.r.push_back(rh);
    if (h < H) out.z.push_back(zn);
  }
  return out;
}

template <class S>
Rollout<S> latent_rollout(ad::Tape<S>& tape, ModelHeads<S>& heads, const SegmentBatch<S>& batch, int horizon) {
  return latent_rollout_with(
      tape, batch, horizon, [&](const ad::Var<S>& o) { return encode(tape, heads, o); },
      [&](const ad::Var<S>& z, const ad::Var<S>& a) { return dynamics_step(tape, heads, z, a); });
}

/// Mean over rows of -cos(a_i, b_i). Rows with a near-zero norm are counted
/// in `degenerate` and logged.
template <class S>
ad::Var<S> negative_cosine(const ad::Var<S>& a, const ad::Var<S>& b, std::size_t* degenerate = nullptr) {
  std::size_t bad = 0;
  auto c = ad::row_cosine(a, b, S(1e-8), &bad);
  if (bad > 0) log_warn("negative_cosine: " + std::to_string(bad) + " near-zero latent(s), eps added to denominator");
  if (degenerate) *degenerate += bad;
  return ad::scale(ad::mean(c), S(-1));
}

template <class S>
struct ModelLoss {
  ad::Var<S> total;
  double reward = 0.0;       // sum_h rho^h * reward MSE
  double consistency = 0.0;  // sum_h rho^h * latent loss
  double max_abs = 0.0;      // max |z| over every predicted latent in the batch
};

/// Builds the rollout loss from a rollout already on `tape`. Targets come from
/// the momentum encoder and carry no gradient.
template <class S>
ModelLoss<S> model_loss_from(ad::Tape<S>& tape, const Rollout<S>& roll, const std::vector<Matrix<S>>& targets,
                             const SegmentBatch<S>& batch, const ModelLossConfig& cfg) {
  cfg.validate();
  const auto H = static_cast<std::size_t>(cfg.horizon);
  ModelLoss<S> out;
  ad::Var<S> total = tape.constant(Matrix<S>::Zero(1, 1));
  double w = 1.0;
  for (std::size_t h = 0; h <= H; ++h) {
    const auto rerr = ad::mean(ad::square(ad::sub(roll.r[h], tape.constant(batch.rewards[h]))));
    out.reward += w * static_cast<double>(rerr.value()(0, 0));
    if (cfg.reward_coef > 0) total = ad::add(total, ad::scale(rerr, static_cast<S>(w * cfg.reward_coef)));
    out.max_abs = std::max(out.max_abs, static_cast<double>(roll.z[h].value().cwiseAbs().maxCoeff()));
    if (cfg.latent_loss != LatentLoss::none) {
      const auto target = tape.constant(targets[h]);
      const auto lz = cfg.latent_loss == LatentLoss::cosine ? negative_cosine(roll.z[h], target)
                                                            : ad::mean(ad::square(ad::sub(roll.z[h], target)));
      out.consistency += w * static_cast<double>(lz.value()(0, 0));
      if (cfg.consistency_coef > 0) total = ad::add(total, ad::scale(lz, static_cast<S>(w * cfg.consistency_coef)));
    }
    w *= cfg.rollout_discount;
  }
  out.total = total;
  return out;
}

template <class S>
std::vector<Matrix<S>> momentum_targets(const ModelHeads<S>& heads, const SegmentBatch<S>& batch, int horizon) {
  // One stacked pass over all steps, then split back per step.
  const Eigen::Index n = batch.obs[0].rows(), d = batch.obs[0].cols();
  Matrix<S> stacked(n * (horizon + 1), d);
  for (int h = 0; h <= horizon; ++h) stacked.middleRows(h * n, n) = batch.obs[static_cast<std::size_t>(h)];
  const Matrix<S> z = encode_target(heads, stacked);
  std::vector<Matrix<S>> t;
  for (int h = 0; h <= horizon; ++h) t.push_back(z.middleRows(h * n, n));
  return t;
}

template <class S>
ModelLoss<S> model_loss(ad::Tape<S>& tape, ModelHeads<S>& heads, const SegmentBatch<S>& batch,
                        const ModelLossConfig& cfg) {
  cfg.validate();
  const auto roll = latent_rollout(tape, heads, batch, cfg.horizon);
  return model_loss_from(tape, roll, momentum_targets(heads, batch, cfg.horizon), batch, cfg);
}

struct ModelStats {
  double total = 0.0;
  double reward = 0.0;
  double consistency = 0.0;
  double max_abs = 0.0;
};

/// One Adam step on encoder and dynamics, then the momentum-encoder update.
template <class S>
ModelStats model_update(ModelHeads<S>& heads, const SegmentBatch<S>& batch, const ModelLossConfig& cfg, double lr,
                        double tau, const AdamConfig& adam = {}) {
  if (batch.batch() == 0) throw ConfigError("model_update: empty batch");
  ad::Tape<S> tape;
  auto loss = model_loss(tape, heads, batch, cfg);
  backward(tape, loss.total, heads.params);
  adam_step(heads.params, lr, kModelGroup, adam);
  update_encoder_target(heads, tau);
  return {static_cast<double>(loss.total.value()(0, 0)), loss.reward, loss.consistency, loss.max_abs};
}

}  // namespace tcrl
