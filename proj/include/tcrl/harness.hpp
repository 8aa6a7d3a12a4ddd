#pragma once

// Experiment driver: seed collection, the policy-learning and planning
// loops, evaluation, metrics, checkpoint / resume.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/agent.hpp"
#include "tcrl/baselines.hpp"
#include "tcrl/config.hpp"
#include "tcrl/envs.hpp"
#include "tcrl/networks.hpp"
#include "tcrl/params.hpp"
#include "tcrl/planner.hpp"
#include "tcrl/replay.hpp"
#include "tcrl/repr.hpp"

namespace tcrl {

struct EvalStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> returns;
};

inline EvalStats summarize(const std::vector<double>& r) {
  EvalStats s;
  s.returns = r;
  if (r.empty()) return s;
  s.min = *std::min_element(r.begin(), r.end());
  s.max = *std::max_element(r.begin(), r.end());
  for (double x : r) s.mean += x;
  s.mean /= static_cast<double>(r.size());
  for (double x : r) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(r.size()));
  return s;
}

/// Plays `episodes` episodes; `reset(ep)` is called at each episode start and
/// `act(env, obs)` returns the action to repeat.
template <class Reset, class Act>
EvalStats run_episodes(envs::Task task, int repeat, int episodes, std::uint64_t seed, Reset&& reset, Act&& act,
                       const envs::PhysicsParams& physics = {}) {
  std::vector<double> returns;
  for (int ep = 0; ep < episodes; ++ep) {
    auto env = envs::make_env(task, Rng::substream(seed, "eval-env", static_cast<std::uint64_t>(ep)).next_u64(), physics);
    auto obs = envs::observe(env);
    reset(ep);
    double total = 0.0;
    while (!env.done()) {
      const auto a = act(env, obs);
      auto r = envs::action_repeat_step(env, a, repeat);
      total += r.reward;
      obs = std::move(r.obs);
    }
    returns.push_back(total);
  }
  return summarize(returns);
}

struct RunSummary {
  long long env_steps = 0;
  long long updates = 0;
  long long metric_rows = 0;
  bool stopped_early = false;
  std::vector<std::pair<long long, EvalStats>> evals;
  std::string last_checkpoint;

  double best_eval() const {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& [_, e] : evals) b = std::max(b, e.mean);
    return b;
  }
  double final_eval() const { return evals.empty() ? 0.0 : evals.back().second.mean; }
};

/// Append-only JSONL writer that counts its rows.
class MetricsWriter {
 public:
  MetricsWriter() = default;

  void open(const std::filesystem::path& file, long long keep_rows) {
    std::vector<std::string> kept;
    if (keep_rows > 0) {
      std::ifstream in(file);
      std::string line;
      while (static_cast<long long>(kept.size()) < keep_rows && std::getline(in, line)) kept.push_back(line);
      if (static_cast<long long>(kept.size()) < keep_rows) kept.clear();
    }
    out_.open(file, std::ios::trunc);
    if (!out_) throw ConfigError("cannot write metrics to " + file.string());
    for (const auto& l : kept) out_ << l << '\n';
    rows_ = keep_rows;
  }

  void write(const nlohmann::json& row) {
    out_ << row.dump() << '\n';
    ++rows_;
  }

  void flush() { out_.flush(); }
  long long rows() const { return rows_; }

 private:
  std::ofstream out_;
  long long rows_ = 0;
};

template <class S>
class Run {
 public:
  explicit Run(RunConfig cfg) : cfg_(std::move(cfg)), replay_(0, 0) {
    cfg_.validate();
    init_common();
    Rng net_rng = Rng::substream(cfg_.seed, "nets");
    if (uses_heads()) {
      HeadsConfig hc{obs_dim_, act_dim_, cfg_.latent_dim, cfg_.hidden_dims, cfg_.mode == Mode::tcrl};
      heads_ = make_heads<S>(hc, net_rng);
    }
    if (uses_ensemble()) {
      EnsembleSpec es = cfg_.ensemble;
      es.obs_dim = obs_dim_;
      es.act_dim = act_dim_;
      es.kind = cfg_.plan_model == PlanModel::pets ? EnsembleKind::gaussian : EnsembleKind::deterministic;
      ensemble_ = make_ensemble<S>(es, net_rng);
    }
    act_rng_ = Rng::substream(cfg_.seed, "explore");
    replay_rng_ = Rng::substream(cfg_.seed, "replay");
    update_rng_ = Rng::substream(cfg_.seed, "update");
    planner_rng_ = Rng::substream(cfg_.seed, "planner");
    replay_ = ReplayBuffer(obs_dim_, act_dim_, cfg_.replay_capacity);
    next_eval_ = cfg_.eval_every;
    next_ckpt_ = cfg_.checkpoint_every;
    start_episode();
  }

  /// Restores everything a checkpoint holds; `overrides` may change run_dir,
  /// total_env_steps and the eval / checkpoint cadence.
  static Run from_checkpoint(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
    const Archive ar = Archive::load(file);
    RunConfig cfg = config_from_json(ar.meta.at("config"));
    for (const auto& kv : overrides) set_assignment(cfg, kv);
    if (cfg.double_precision != std::is_same_v<S, double>) throw ConfigError("checkpoint precision does not match");
    Run r(cfg);
    r.restore(ar);
    return r;
  }

  const RunConfig& config() const { return cfg_; }
  ModelHeads<S>& heads() { return *heads_; }
  Ensemble<S>& ensemble() { return *ensemble_; }
  const ReplayBuffer& replay() const { return replay_; }
  long long env_step() const { return env_step_; }

  RunSummary run() {
    std::filesystem::create_directories(cfg_.run_dir);
    metrics_.open(std::filesystem::path(cfg_.run_dir) / "metrics.jsonl", restored_rows_);
    timing_.open(std::filesystem::path(cfg_.run_dir) / "timing.jsonl", restored_ ? std::ios::app : std::ios::trunc);
    if (!restored_) metrics_.write({{"type", "config"}, {"config", config_to_json(cfg_)}});
    clock_ = std::chrono::steady_clock::now();
    timing_mark_ = env_step_;

    while (episode_ < cfg_.seed_episodes) {
      std::vector<double> a(act_dim_);
      for (auto& x : a) x = act_rng_.uniform(-1.0, 1.0);
      agent_step(a);
    }

    RunSummary summary;
    bool stop = false;
    while (env_step_ < cfg_.total_env_steps && !stop) {
      if (cfg_.checkpoint_every > 0 && env_step_ >= next_ckpt_) {
        summary.last_checkpoint = save_checkpoint().string();
        while (next_ckpt_ <= env_step_) next_ckpt_ += cfg_.checkpoint_every;
      }
      if (!pretrained_) {
        pretrained_ = true;
        credit_ = 0;
        const long long burst = env_step_ / cfg_.update_frequency;
        for (long long i = 0; i < burst; ++i) update();
      }
      if (cfg_.eval_every > 0 && env_step_ >= next_eval_) {
        while (next_eval_ <= env_step_) next_eval_ += cfg_.eval_every;
        stop = eval_point(summary);
        if (stop) break;
      }
      agent_step(choose_action());
      while (credit_ >= cfg_.update_frequency) {
        credit_ -= cfg_.update_frequency;
        update();
      }
    }
    if (!stop && cfg_.eval_episodes > 0 && last_eval_step_ != env_step_) stop = eval_point(summary);
    summary.stopped_early = stop;
    summary.last_checkpoint = save_checkpoint().string();
    metrics_.flush();
    timing_.flush();
    summary.env_steps = env_step_;
    summary.updates = updates_;
    summary.metric_rows = metrics_.rows();
    return summary;
  }

  /// Deterministic episodes: sigma = 0 policy in tcrl mode, MPPI otherwise.
  EvalStats evaluate(int episodes, std::uint64_t seed) {
    const int repeat = cfg_.resolved_action_repeat();
    if (cfg_.mode == Mode::tcrl) {
      Rng dummy(0);
      return run_episodes(
          task_, repeat, episodes, seed, [](int) {},
          [&](const envs::EnvState&, const std::vector<double>& obs) { return explore_action(*heads_, obs, 0.0, 1.0, dummy); });
    }
    Rng prng(0);
    std::optional<PlanSolution> sol;
    return run_episodes(
        task_, repeat, episodes, seed,
        [&](int ep) {
          sol.reset();
          prng = Rng::substream(seed, "eval-planner", static_cast<std::uint64_t>(ep));
        },
        [&](const envs::EnvState& env, const std::vector<double>& obs) { return plan(env, obs, sol, prng); });
  }

 private:
  bool uses_heads() const { return cfg_.mode == Mode::tcrl || cfg_.mode == Mode::tcrl_dynamics; }
  bool uses_ensemble() const {
    return cfg_.mode == Mode::baseline_plan && (cfg_.plan_model == PlanModel::ensdet || cfg_.plan_model == PlanModel::pets);
  }

  void init_common() {
    task_ = cfg_.task;
    obs_dim_ = envs::obs_dim(task_);
    act_dim_ = envs::act_dim(task_);
  }

  std::uint64_t train_env_seed(long long episode) const {
    return Rng::substream(cfg_.seed, "train-env", static_cast<std::uint64_t>(episode)).next_u64();
  }

  void start_episode() {
    env_ = envs::make_env(task_, train_env_seed(episode_));
    obs_ = envs::observe(env_);
    episode_return_ = 0.0;
    solution_.reset();
    if (ensemble_) ensemble_->norm.update(obs_);
  }

  std::size_t segment_length() const {
    switch (cfg_.mode) {
      case Mode::tcrl:
        return static_cast<std::size_t>(std::max(cfg_.model.horizon + 1, cfg_.td.nstep));
      case Mode::tcrl_dynamics:
        return static_cast<std::size_t>(cfg_.model.horizon + 1);
      case Mode::baseline_plan:
        return cfg_.plan_model == PlanModel::ensdet ? static_cast<std::size_t>(cfg_.model.horizon) : 1;
    }
    return 1;
  }

  template <class Model>
  std::vector<double> plan_with(Model& model, const std::vector<double>& obs, std::optional<PlanSolution>& sol, Rng& rng) {
    auto res = plan_action(model, obs, sol ? &*sol : nullptr, cfg_.mppi, rng);
    sol = std::move(res.solution);
    return res.action;
  }

  std::vector<double> plan(const envs::EnvState& env, const std::vector<double>& obs, std::optional<PlanSolution>& sol,
                           Rng& rng) {
    if (cfg_.mode == Mode::tcrl_dynamics) {
      LatentModel<S> m(*heads_);
      return plan_with(m, obs, sol, rng);
    }
    switch (cfg_.plan_model) {
      case PlanModel::ensdet: {
        EnsDetModel<S> m(*ensemble_);
        return plan_with(m, obs, sol, rng);
      }
      case PlanModel::pets: {
        PetsModel<S> m(*ensemble_);
        return plan_with(m, obs, sol, rng);
      }
      case PlanModel::simulator: {
        SimulatorModel m(env, cfg_.resolved_action_repeat());
        return plan_with(m, obs, sol, rng);
      }
      case PlanModel::tcrl:
        break;
    }
    throw InternalError("no planning model for this mode");
  }

  std::vector<double> choose_action() {
    if (cfg_.mode == Mode::tcrl) {
      return explore_action(*heads_, obs_, sigma_at(cfg_.explore, env_step_), cfg_.explore.clip, act_rng_);
    }
    return plan(env_, obs_, solution_, planner_rng_);
  }

  void agent_step(const std::vector<double>& action) {
    const int before = env_.step;
    auto r = envs::action_repeat_step(env_, action, cfg_.resolved_action_repeat());
    const int taken = env_.step - before;
    env_step_ += taken;
    credit_ += taken;
    replay_.push({obs_, action, r.reward, r.obs, r.done}, r.done);
    if (ensemble_) ensemble_->norm.update(r.obs);
    episode_return_ += r.reward;
    obs_ = std::move(r.obs);
    if (env_step_ - timing_mark_ >= 1000) {
      const auto now = std::chrono::steady_clock::now();
      const double ms = std::chrono::duration<double, std::milli>(now - clock_).count();
      nlohmann::json row{{"env_step", env_step_}, {"wall_ms_per_1000", ms * 1000.0 / static_cast<double>(env_step_ - timing_mark_)}};
      timing_ << row.dump() << '\n';
      clock_ = now;
      timing_mark_ = env_step_;
    }
    if (r.done) {
      metrics_.write({{"type", "episode"}, {"env_step", env_step_}, {"episode", episode_}, {"episode_return", episode_return_}});
      ++episode_;
      start_episode();
    }
  }

  void update() {
    const std::size_t len = segment_length();
    if (cfg_.mode == Mode::baseline_plan && cfg_.plan_model == PlanModel::simulator) return;
    if (replay_.valid_starts(len) == 0) return;
    const auto batch = replay_.sample_segments<S>(static_cast<std::size_t>(cfg_.batch_size), len, replay_rng_);
    nlohmann::json row{{"type", "update"}, {"env_step", env_step_}, {"update", updates_}};
    if (cfg_.mode == Mode::tcrl || cfg_.mode == Mode::tcrl_dynamics) {
      const auto ms = model_update(*heads_, batch, cfg_.model, cfg_.lr, cfg_.tau);
      row["loss/model_total"] = ms.total;
      row["loss/reward"] = ms.reward;
      row["loss/consistency"] = ms.consistency;
      row["latent/max_abs"] = ms.max_abs;
      if (cfg_.mode == Mode::tcrl) {
        const double sigma = sigma_at(cfg_.explore, env_step_);
        const auto cs = critic_update(*heads_, batch, cfg_.td, sigma, update_rng_);
        const auto as = actor_update(*heads_, batch, cfg_.td, sigma, cfg_.explore.clip, update_rng_);
        row["loss/critic"] = cs.loss;
        row["loss/actor"] = as.loss;
        row["q/mean"] = cs.q_mean;
        row["sigma/current"] = sigma;
      }
    } else if (cfg_.plan_model == PlanModel::ensdet) {
      row["loss/model_total"] = ensdet_update(*ensemble_, batch, cfg_.model.horizon, cfg_.model.rollout_discount, cfg_.lr);
    } else {
      row["loss/model_total"] = pets_update(*ensemble_, batch, cfg_.lr, update_rng_);
    }
    ++updates_;
    metrics_.write(row);
  }

  bool eval_point(RunSummary& summary) {
    if (cfg_.eval_episodes <= 0) return false;
    const std::uint64_t seed = Rng::substream(cfg_.seed, "eval", static_cast<std::uint64_t>(eval_index_)).next_u64();
    ++eval_index_;
    const EvalStats st = evaluate(cfg_.eval_episodes, seed);
    last_eval_step_ = env_step_;
    metrics_.write({{"type", "eval"},
                    {"env_step", env_step_},
                    {"eval_return/mean", st.mean},
                    {"eval_return/std", st.std},
                    {"eval_return/min", st.min},
                    {"eval_return/max", st.max}});
    metrics_.flush();
    summary.evals.emplace_back(env_step_, st);
    return cfg_.early_stop_return > 0 && st.mean >= cfg_.early_stop_return;
  }

  std::filesystem::path save_checkpoint() {
    Archive ar;
    ar.meta["config"] = config_to_json(cfg_);
    ar.meta["precision"] = dtype_name<S>();
    ar.meta["counters"] = {{"env_step", env_step_},     {"episode", episode_},       {"updates", updates_},
                           {"credit", credit_},         {"next_eval", next_eval_},   {"next_ckpt", next_ckpt_},
                           {"eval_index", eval_index_}, {"pretrained", pretrained_}, {"last_eval_step", last_eval_step_},
                           {"metrics_rows", metrics_.rows()}};
    ar.meta["rng"] = {{"explore", act_rng_.state()},
                      {"replay", replay_rng_.state()},
                      {"update", update_rng_.state()},
                      {"planner", planner_rng_.state()}};
    ar.meta["env"] = {{"q", env_.q}, {"goal", env_.goal}, {"step", env_.step}, {"obs", obs_}, {"episode_return", episode_return_}};
    if (heads_) save_params(ar, heads_->params, "params/");
    if (ensemble_) {
      save_params(ar, ensemble_->params, "ensemble/");
      ensemble_->norm.save(ar, "normalizer/");
    }
    replay_.save(ar, "replay/");
    ar.meta["has_solution"] = solution_.has_value();
    if (solution_) {
      ar.put<double>("plan/mean", solution_->mean);
      ar.put<double>("plan/std", solution_->std);
    }
    const auto file = std::filesystem::path(cfg_.run_dir) / ("ckpt_" + std::to_string(env_step_) + ".bin");
    std::filesystem::create_directories(cfg_.run_dir);
    ar.save(file);
    return file;
  }

  void restore(const Archive& ar) {
    const auto& c = ar.meta.at("counters");
    env_step_ = c.at("env_step").get<long long>();
    episode_ = c.at("episode").get<long long>();
    updates_ = c.at("updates").get<long long>();
    credit_ = c.at("credit").get<long long>();
    next_eval_ = c.at("next_eval").get<long long>();
    next_ckpt_ = c.at("next_ckpt").get<long long>();
    eval_index_ = c.at("eval_index").get<long long>();
    pretrained_ = c.at("pretrained").get<bool>();
    last_eval_step_ = c.at("last_eval_step").get<long long>();
    restored_rows_ = c.at("metrics_rows").get<long long>();
    restored_ = true;
    const auto& rng = ar.meta.at("rng");
    act_rng_.set_state(rng.at("explore").get<std::string>());
    replay_rng_.set_state(rng.at("replay").get<std::string>());
    update_rng_.set_state(rng.at("update").get<std::string>());
    planner_rng_.set_state(rng.at("planner").get<std::string>());
    const auto& e = ar.meta.at("env");
    env_ = envs::make_env(task_, 0);
    env_.q = e.at("q").get<std::vector<double>>();
    env_.goal = e.at("goal").get<std::vector<double>>();
    env_.step = e.at("step").get<int>();
    obs_ = e.at("obs").get<std::vector<double>>();
    episode_return_ = e.at("episode_return").get<double>();
    if (heads_) {
      auto loaded = load_params<S>(ar, "params/");
      require_same_layout(heads_->params, loaded);
      heads_->params = std::move(loaded);
    }
    if (ensemble_) {
      auto loaded = load_params<S>(ar, "ensemble/");
      require_same_layout(ensemble_->params, loaded);
      ensemble_->params = std::move(loaded);
      ensemble_->norm = RunningNormalizer::load(ar, "normalizer/");
    }
    replay_ = ReplayBuffer::load(ar, "replay/");
    if (replay_.obs_dim() != obs_dim_ || replay_.act_dim() != act_dim_) {
      throw ConfigError("checkpoint replay has dims " + std::to_string(replay_.obs_dim()) + "/" +
                        std::to_string(replay_.act_dim()) + ", task expects " + std::to_string(obs_dim_) + "/" +
                        std::to_string(act_dim_));
    }
    solution_.reset();
    if (ar.meta.at("has_solution").get<bool>()) solution_ = PlanSolution{ar.get<double>("plan/mean"), ar.get<double>("plan/std")};
  }

  RunConfig cfg_;
  envs::Task task_{};
  std::size_t obs_dim_ = 0;
  std::size_t act_dim_ = 0;
  std::optional<ModelHeads<S>> heads_;
  std::optional<Ensemble<S>> ensemble_;
  ReplayBuffer replay_;
  Rng act_rng_, replay_rng_, update_rng_, planner_rng_;

  envs::EnvState env_;
  std::vector<double> obs_;
  double episode_return_ = 0.0;
  std::optional<PlanSolution> solution_;

  long long env_step_ = 0;
  long long episode_ = 0;
  long long updates_ = 0;
  long long credit_ = 0;
  long long next_eval_ = 0;
  long long next_ckpt_ = 0;
  long long eval_index_ = 0;
  long long last_eval_step_ = -1;
  bool pretrained_ = false;
  bool restored_ = false;
  long long restored_rows_ = 0;

  MetricsWriter metrics_;
  std::ofstream timing_;
  std::chrono::steady_clock::time_point clock_;
  long long timing_mark_ = 0;
};

// ---- precision dispatch ------------------------------------------------------------

inline RunSummary train(const RunConfig& cfg) {
  if (cfg.double_precision) return Run<double>(cfg).run();
  return Run<float>(cfg).run();
}

inline std::string checkpoint_precision(const std::filesystem::path& file) {
  return Archive::load(file).meta.at("precision").get<std::string>();
}

inline RunSummary resume(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  if (checkpoint_precision(file) == "f64") return Run<double>::from_checkpoint(file, overrides).run();
  return Run<float>::from_checkpoint(file, overrides).run();
}

/// Loads a checkpoint and plays `episodes` deterministic episodes. A `task`
/// override whose dimensions differ from the checkpoint raises ConfigError.
inline EvalStats evaluate_checkpoint(const std::filesystem::path& file, int episodes, std::uint64_t seed,
                                     const std::optional<std::string>& task = std::nullopt) {
  const Archive ar = Archive::load(file);
  RunConfig cfg = config_from_json(ar.meta.at("config"));
  if (task) {
    const auto t = envs::parse_task(*task);
    const auto& replay_dims = ar.meta.at("replay/dims");
    const auto od = replay_dims.at(0).get<std::size_t>(), ad = replay_dims.at(1).get<std::size_t>();
    if (envs::obs_dim(t) != od || envs::act_dim(t) != ad) {
      throw ConfigError("dimension mismatch: checkpoint was trained with obs_dim " + std::to_string(od) + ", act_dim " +
                        std::to_string(ad) + "; task " + *task + " has obs_dim " + std::to_string(envs::obs_dim(t)) +
                        ", act_dim " + std::to_string(envs::act_dim(t)));
    }
  }
  std::vector<std::string> ov;
  if (task) ov.push_back("task=" + *task);
  if (cfg.double_precision) return Run<double>::from_checkpoint(file, ov).evaluate(episodes, seed);
  return Run<float>::from_checkpoint(file, ov).evaluate(episodes, seed);
}

// ---- ablation grids ----------------------------------------------------------------

struct AblationRun {
  std::string name;
  std::vector<std::string> overrides;
};

/// Named sweeps: horizon (H in 1,3,5,10), nstep (n in 1,3,5), latent (cosine,
/// mse, none), consistency (coef 0 and 1), and all = horizon + nstep + mse.
inline std::vector<AblationRun> ablation_grid(const std::string& name) {
  std::vector<AblationRun> out;
  auto horizon = [&] {
    for (int h : {1, 3, 5, 10}) out.push_back({"horizon_" + std::to_string(h), {"model.horizon=" + std::to_string(h)}});
  };
  auto nstep = [&] {
    for (int n : {1, 3, 5}) out.push_back({"nstep_" + std::to_string(n), {"td.nstep=" + std::to_string(n)}});
  };
  if (name == "horizon") {
    horizon();
  } else if (name == "nstep") {
    nstep();
  } else if (name == "latent") {
    for (const char* l : {"cosine", "mse", "none"}) out.push_back({std::string("latent_") + l, {std::string("model.latent_loss=") + l}});
  } else if (name == "consistency") {
    out.push_back({"consistency_0", {"model.consistency_coef=0"}});
    out.push_back({"consistency_1", {"model.consistency_coef=1"}});
  } else if (name == "all") {
    horizon();
    nstep();
    out.push_back({"latent_mse", {"model.latent_loss=mse"}});
  } else {
    throw ConfigError("unknown ablation grid '" + name + "' (horizon, nstep, latent, consistency, all)");
  }
  return out;
}

// ---- CSV export --------------------------------------------------------------------

/// Writes one `<metric>.csv` (env_step,value) per numeric metric; '/' in
/// metric names becomes '_'. Returns the files written.
inline std::vector<std::filesystem::path> emit_csv(const std::filesystem::path& metrics, const std::filesystem::path& out_dir) {
  std::ifstream in(metrics);
  if (!in) throw ConfigError("cannot read " + metrics.string());
  std::filesystem::create_directories(out_dir);
  std::map<std::string, std::ofstream> files;
  std::vector<std::filesystem::path> written;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    if (!row.contains("env_step")) continue;
    const auto step = row.at("env_step").get<long long>();
    for (const auto& [k, v] : row.items()) {
      if (k == "env_step" || k == "type" || !v.is_number()) continue;
      std::string name = k;
      std::replace(name.begin(), name.end(), '/', '_');
      auto it = files.find(name);
      if (it == files.end()) {
        const auto path = out_dir / (name + ".csv");
        it = files.emplace(name, std::ofstream(path, std::ios::trunc)).first;
        it->second << "env_step," << k << '\n';
        written.push_back(path);
      }
      it->second << step << ',' << v.dump() << '\n';
    }
  }
  return written;
}

}  // namespace tcrl
