#pragma once

// Observation-space comparison models: a deterministic multi-step ensemble
// and a probabilistic one-step ensemble, both on normalized observations.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tcrl/autodiff.hpp"
#include "tcrl/mlp.hpp"
#include "tcrl/params.hpp"
#include "tcrl/planner.hpp"
#include "tcrl/replay.hpp"

namespace tcrl {

/// Welford running mean / variance per dimension.
class RunningNormalizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  explicit RunningNormalizer(std::size_t dim = 0) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  std::size_t dim() const { return mean_.size(); }
  long long count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }

  void update(const std::vector<double>& x) {
    check(x.size());
    ++count_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean_[i];
      mean_[i] += d / static_cast<double>(count_);
      m2_[i] += d * (x[i] - mean_[i]);
    }
  }

  /// Sample variance; zero before two observations.
  double variance(std::size_t i) const { return count_ < 2 ? 0.0 : m2_[i] / static_cast<double>(count_ - 1); }

  /// Std used for scaling: 1 until two observations arrive, then the sample std floored.
  double scale(std::size_t i) const { return count_ < 2 ? 1.0 : std::max(std::sqrt(variance(i)), kStdFloor); }

  std::vector<double> normalize(const std::vector<double>& x) const {
    check(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean_[i]) / scale(i);
    return y;
  }

  std::vector<double> denormalize(const std::vector<double>& y) const {
    check(y.size());
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] * scale(i) + mean_[i];
    return x;
  }

  template <class S>
  Matrix<S> normalize(const Matrix<S>& x) const {
    check(static_cast<std::size_t>(x.cols()));
    Matrix<S> y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const auto i = static_cast<std::size_t>(j);
      y.col(j) = ((x.col(j).array() - static_cast<S>(mean_[i])) / static_cast<S>(scale(i))).matrix();
    }
    return y;
  }

  void save(Archive& ar, const std::string& prefix) const {
    ar.put_vector<double>(prefix + "mean", mean_);
    ar.put_vector<double>(prefix + "m2", m2_);
    ar.meta[prefix + "count"] = count_;
  }

  static RunningNormalizer load(const Archive& ar, const std::string& prefix) {
    RunningNormalizer n;
    n.mean_ = ar.get_vector<double>(prefix + "mean");
    n.m2_ = ar.get_vector<double>(prefix + "m2");
    n.count_ = ar.meta.at(prefix + "count").get<long long>();
    return n;
  }

 private:
  void check(std::size_t n) const {
    if (n != mean_.size()) {
      throw ConfigError("normalizer: got " + std::to_string(n) + " dims, expected " + std::to_string(mean_.size()));
    }
  }

  long long count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

enum class EnsembleKind { deterministic, gaussian };

struct EnsembleSpec {
  std::size_t obs_dim = 3;
  std::size_t act_dim = 1;
  std::size_t members = 5;
  std::vector<std::size_t> hidden_dims{200, 200};
  EnsembleKind kind = EnsembleKind::deterministic;
};

/// Each member maps (normalized obs, action) to a normalized-observation
/// delta and a reward; gaussian members also output a log-variance for each.
template <class S>
struct Ensemble {
  EnsembleSpec spec;
  MlpSpec member;
  ParamSet<S> params;
  RunningNormalizer norm;

  std::size_t out_dim() const { return spec.obs_dim + 1; }
};

inline std::string member_prefix(std::size_t e) { return "member" + std::to_string(e); }

template <class S>
Ensemble<S> make_ensemble(const EnsembleSpec& spec, Rng& rng) {
  if (spec.members < 1) throw ConfigError("ensemble: need at least one member");
  Ensemble<S> ens;
  ens.spec = spec;
  const std::size_t out = spec.obs_dim + 1;
  ens.member = {spec.obs_dim + spec.act_dim, spec.hidden_dims,
                spec.kind == EnsembleKind::gaussian ? 2 * out : out};
  for (std::size_t e = 0; e < spec.members; ++e) init_mlp(ens.params, member_prefix(e), ens.member, rng);
  ens.norm = RunningNormalizer(spec.obs_dim);
  return ens;
}

template <class S>
Matrix<S> concat(const Matrix<S>& a, const Matrix<S>& b) {
  Matrix<S> out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

// ---- deterministic multi-step ensemble ---------------------------------------

/// sum_{h<H} rho^h [ |x_hat_{h+1} - x_{h+1}|^2 + (r_hat_h - r_h)^2 ], with x the
/// normalized observation and x_hat unrolled recursively from x_0; averaged
/// over members and batch rows.
template <class S>
ad::Var<S> ensdet_loss(ad::Tape<S>& tape, Ensemble<S>& ens, const SegmentBatch<S>& batch, int horizon, double rho) {
  const auto H = static_cast<std::size_t>(horizon);
  if (horizon < 1 || batch.steps() < H) throw ConfigError("ensdet_loss: segment shorter than horizon");
  if (batch.batch() == 0) throw ConfigError("ensdet_loss: empty batch");
  std::vector<Matrix<S>> x;
  for (std::size_t h = 0; h <= H; ++h) x.push_back(ens.norm.normalize(batch.obs[h]));
  const auto od = static_cast<Eigen::Index>(ens.spec.obs_dim);
  ad::Var<S> total = tape.constant(Matrix<S>::Zero(1, 1));
  for (std::size_t e = 0; e < ens.spec.members; ++e) {
    ad::Var<S> xh = tape.constant(x[0]);
    double w = 1.0;
    for (std::size_t h = 0; h < H; ++h) {
      const auto out =
          mlp_forward(tape, ens.params, member_prefix(e), ens.member, ad::concat_cols(xh, tape.constant(batch.actions[h])));
      xh = ad::add(xh, ad::slice_cols(out, 0, od));
      const auto r = ad::slice_cols(out, od, 1);
      const auto obs_err = ad::mean(ad::row_sum(ad::square(ad::sub(xh, tape.constant(x[h + 1])))));
      const auto rew_err = ad::mean(ad::square(ad::sub(r, tape.constant(batch.rewards[h]))));
      total = ad::add(total, ad::scale(ad::add(obs_err, rew_err), static_cast<S>(w)));
      w *= rho;
    }
  }
  return ad::scale(total, S(1) / static_cast<S>(ens.spec.members));
}

template <class S>
double ensdet_update(Ensemble<S>& ens, const SegmentBatch<S>& batch, int horizon, double rho, double lr) {
  ad::Tape<S> tape;
  const auto loss = ensdet_loss(tape, ens, batch, horizon, rho);
  backward(tape, loss, ens.params);
  adam_step(ens.params, lr, {"member"});
  return static_cast<double>(loss.value()(0, 0));
}

/// Member-averaged one-step prediction on normalized observations.
template <class S>
std::pair<Matrix<S>, Matrix<S>> ensdet_predict(const Ensemble<S>& ens, const Matrix<S>& x, const Matrix<S>& a) {
  const auto od = static_cast<Eigen::Index>(ens.spec.obs_dim);
  const Matrix<S> in = concat(x, a);
  Matrix<S> sum = Matrix<S>::Zero(x.rows(), od + 1);
  for (std::size_t e = 0; e < ens.spec.members; ++e) sum += mlp_infer(ens.params, member_prefix(e), ens.member, in);
  sum /= static_cast<S>(ens.spec.members);
  return {x + sum.leftCols(od), sum.rightCols(1)};
}

template <class S>
class EnsDetModel {
 public:
  using State = Matrix<S>;

  explicit EnsDetModel(const Ensemble<S>& ens) : ens_(&ens) {}
  std::size_t act_dim() const { return ens_->spec.act_dim; }

  State init(const std::vector<double>& obs, std::size_t n) const {
    return to_matrix<S>(ens_->norm.normalize(obs)).replicate(static_cast<Eigen::Index>(n), 1);
  }

  Matrix<double> step(State& x, const Matrix<double>& a, Rng&) const {
    auto [xn, r] = ensdet_predict(*ens_, x, Matrix<S>(a.cast<S>()));
    x = std::move(xn);
    return r.template cast<double>();
  }

 private:
  const Ensemble<S>* ens_;
};

// ---- probabilistic one-step ensemble -------------------------------------------

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 2.0;

/// Mean over all entries of 0.5 * (logvar + (mu - y)^2 exp(-logvar) + ln 2pi).
template <class S>
ad::Var<S> gaussian_nll(ad::Tape<S>& tape, const ad::Var<S>& mu, const ad::Var<S>& logvar, const Matrix<S>& y) {
  const auto err2 = ad::square(ad::sub(mu, tape.constant(y)));
  const auto inv_var = ad::exp(ad::scale(logvar, S(-1)));
  const auto per = ad::add(logvar, ad::mul(err2, inv_var));
  return ad::scale(ad::add_scalar(ad::mean(per), static_cast<S>(std::log(2.0 * std::numbers::pi))), S(0.5));
}

/// One-step regression targets [x_1 - x_0, r_0] on normalized observations.
template <class S>
Matrix<S> pets_targets(const Ensemble<S>& ens, const SegmentBatch<S>& batch) {
  const Matrix<S> x0 = ens.norm.normalize(batch.obs[0]);
  const Matrix<S> x1 = ens.norm.normalize(batch.obs[1]);
  return concat(Matrix<S>(x1 - x0), batch.rewards[0]);
}

template <class S>
Matrix<S> gather_rows(const Matrix<S>& m, const std::vector<std::size_t>& rows) {
  Matrix<S> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

/// Gaussian NLL averaged over members; each member sees its own bootstrap
/// resample of the batch rows.
template <class S>
ad::Var<S> pets_nll_loss(ad::Tape<S>& tape, Ensemble<S>& ens, const SegmentBatch<S>& batch, Rng& rng) {
  if (ens.spec.kind != EnsembleKind::gaussian) throw ConfigError("pets_nll_loss: ensemble is not gaussian");
  if (batch.steps() < 1 || batch.batch() == 0) throw ConfigError("pets_nll_loss: need one-step transitions");
  const Matrix<S> x0 = ens.norm.normalize(batch.obs[0]);
  const Matrix<S> in = concat(x0, batch.actions[0]);
  const Matrix<S> y = pets_targets(ens, batch);
  const auto d = static_cast<Eigen::Index>(ens.out_dim());
  const std::size_t n = batch.batch();
  ad::Var<S> total = tape.constant(Matrix<S>::Zero(1, 1));
  for (std::size_t e = 0; e < ens.spec.members; ++e) {
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = rng.index(n);
    const auto out = mlp_forward(tape, ens.params, member_prefix(e), ens.member, tape.constant(gather_rows(in, rows)));
    const auto mu = ad::slice_cols(out, 0, d);
    const auto lv = ad::clamp(ad::slice_cols(out, d, d), static_cast<S>(kLogVarMin), static_cast<S>(kLogVarMax));
    total = ad::add(total, gaussian_nll(tape, mu, lv, gather_rows(y, rows)));
  }
  return ad::scale(total, S(1) / static_cast<S>(ens.spec.members));
}

template <class S>
double pets_update(Ensemble<S>& ens, const SegmentBatch<S>& batch, double lr, Rng& rng) {
  ad::Tape<S> tape;
  const auto loss = pets_nll_loss(tape, ens, batch, rng);
  backward(tape, loss, ens.params);
  adam_step(ens.params, lr, {"member"});
  return static_cast<double>(loss.value()(0, 0));
}

/// Member output split into mean and clamped log-variance.
template <class S>
std::pair<Matrix<S>, Matrix<S>> pets_member_predict(const Ensemble<S>& ens, std::size_t e, const Matrix<S>& x,
                                                    const Matrix<S>& a) {
  const auto d = static_cast<Eigen::Index>(ens.out_dim());
  const Matrix<S> out = mlp_infer(ens.params, member_prefix(e), ens.member, concat(x, a));
  return {out.leftCols(d), out.rightCols(d).cwiseMax(static_cast<S>(kLogVarMin)).cwiseMin(static_cast<S>(kLogVarMax))};
}

/// Trajectory sampling: every particle draws a member uniformly at each step
/// and samples its next state and reward from that member's Gaussian.
template <class S>
class PetsModel {
 public:
  using State = Matrix<S>;

  explicit PetsModel(const Ensemble<S>& ens) : ens_(&ens) {}
  std::size_t act_dim() const { return ens_->spec.act_dim; }

  State init(const std::vector<double>& obs, std::size_t n) const {
    return to_matrix<S>(ens_->norm.normalize(obs)).replicate(static_cast<Eigen::Index>(n), 1);
  }

  Matrix<double> step(State& x, const Matrix<double>& a, Rng& rng) const {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const std::size_t E = ens_->spec.members;
    const auto od = static_cast<Eigen::Index>(ens_->spec.obs_dim);
    std::vector<std::vector<std::size_t>> groups(E);
    for (std::size_t i = 0; i < n; ++i) groups[rng.index(E)].push_back(i);
    const Matrix<S> af = a.cast<S>();
    Matrix<double> r(static_cast<Eigen::Index>(n), 1);
    for (std::size_t e = 0; e < E; ++e) {
      const auto& rows = groups[e];
      if (rows.empty()) continue;
      const auto [mu, lv] = pets_member_predict(*ens_, e, gather_rows(x, rows), gather_rows(af, rows));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(rows[k]);
        const auto kk = static_cast<Eigen::Index>(k);
        for (Eigen::Index j = 0; j <= od; ++j) {
          const double sample = static_cast<double>(mu(kk, j)) +
                                std::exp(0.5 * static_cast<double>(lv(kk, j))) * rng.normal();
          if (j < od) {
            x(i, j) += static_cast<S>(sample);
          } else {
            r(i, 0) = sample;
          }
        }
      }
    }
    return r;
  }

 private:
  const Ensemble<S>* ens_;
};

}  // namespace tcrl
