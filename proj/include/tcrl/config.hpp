#pragma once

// Flat run configuration. Files hold one `dotted.key = value` per line
// ('#' starts a comment); command-line overrides use the same keys.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/agent.hpp"
#include "tcrl/baselines.hpp"
#include "tcrl/envs.hpp"
#include "tcrl/planner.hpp"
#include "tcrl/repr.hpp"

namespace tcrl {

enum class Mode { tcrl, tcrl_dynamics, baseline_plan };
enum class PlanModel { tcrl, ensdet, pets, simulator };

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::tcrl:
      return "tcrl";
    case Mode::tcrl_dynamics:
      return "tcrl_dynamics";
    case Mode::baseline_plan:
      return "baseline_plan";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "tcrl") return Mode::tcrl;
  if (s == "tcrl_dynamics") return Mode::tcrl_dynamics;
  if (s == "baseline_plan") return Mode::baseline_plan;
  throw ConfigError("mode must be tcrl, tcrl_dynamics or baseline_plan (got '" + s + "')");
}

inline std::string plan_model_name(PlanModel m) {
  switch (m) {
    case PlanModel::tcrl:
      return "tcrl";
    case PlanModel::ensdet:
      return "ensdet";
    case PlanModel::pets:
      return "pets";
    case PlanModel::simulator:
      return "simulator";
  }
  return "?";
}

inline PlanModel parse_plan_model(const std::string& s) {
  if (s == "tcrl") return PlanModel::tcrl;
  if (s == "ensdet") return PlanModel::ensdet;
  if (s == "pets") return PlanModel::pets;
  if (s == "simulator") return PlanModel::simulator;
  throw ConfigError("plan model must be tcrl, ensdet, pets or simulator (got '" + s + "')");
}

struct RunConfig {
  Mode mode = Mode::tcrl;
  PlanModel plan_model = PlanModel::tcrl;
  envs::Task task = envs::Task::pendulum_swingup;
  std::uint64_t seed = 1;
  long long total_env_steps = 100000;
  int seed_episodes = 10;
  int action_repeat = 0;  // 0: per-task default
  int update_frequency = 2;
  int batch_size = 512;
  double lr = 3e-4;
  bool double_precision = false;
  std::size_t replay_capacity = 0;

  std::size_t latent_dim = 50;
  std::vector<std::size_t> hidden_dims{256, 256};

  ModelLossConfig model;
  double tau = 0.005;
  TdConfig td;
  ExplorationSchedule explore;
  MppiConfig mppi;
  EnsembleSpec ensemble;

  long long eval_every = 10000;
  int eval_episodes = 10;
  double early_stop_return = 0.0;  // > 0: stop once an evaluation mean reaches it
  long long checkpoint_every = 0;
  std::string run_dir = "runs/default";

  /// Planning modes decide less often; the policy acts every 2 physics steps.
  int resolved_action_repeat() const {
    if (action_repeat > 0) return action_repeat;
    if (mode == Mode::tcrl) return 2;
    switch (task) {
      case envs::Task::cartpole_balance:
      case envs::Task::cartpole_swingup:
        return 8;
      default:
        return 4;
    }
  }

  void validate() const {
    if (total_env_steps < 0) throw ConfigError("total_env_steps must be >= 0");
    if (seed_episodes < 0) throw ConfigError("seed_episodes must be >= 0");
    if (action_repeat < 0) throw ConfigError("action_repeat must be >= 1 or auto");
    if (update_frequency < 1) throw ConfigError("update_frequency must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (latent_dim < 1) throw ConfigError("net.latent_dim must be >= 1");
    if (hidden_dims.empty()) throw ConfigError("net.hidden must list at least one width");
    if (tau < 0 || tau > 1) throw ConfigError("model.tau must be in [0, 1]");
    if (eval_every < 0 || eval_episodes < 0) throw ConfigError("eval settings must be >= 0");
    if (ensemble.members < 1) throw ConfigError("ensemble.members must be >= 1");
    model.validate();
    td.validate();
    explore.validate();
    mppi.validate();
    if (mode == Mode::tcrl_dynamics && plan_model != PlanModel::tcrl) {
      throw ConfigError("mode tcrl_dynamics plans with the tcrl model; use baseline_plan for other models");
    }
    if (mode == Mode::baseline_plan && plan_model == PlanModel::tcrl) {
      throw ConfigError("mode baseline_plan needs plan.model ensdet, pets or simulator");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("config '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "True") return true;
  if (v == "false" || v == "0" || v == "no" || v == "False") return false;
  throw ConfigError("config '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& key, std::string v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }), v.end());
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

inline std::string join_dims(const std::vector<std::size_t>& d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

template <class T>
Field number(std::string key, T RunConfig::*member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) { return nlohmann::json(c.*member); }};
}

template <class Sub, class T>
Field sub_number(std::string key, Sub RunConfig::*sub, T Sub::*member) {
  return {key, [key, sub, member](RunConfig& c, const std::string& v) { (c.*sub).*member = parse_number<T>(key, v); },
          [sub, member](const RunConfig& c) { return nlohmann::json((c.*sub).*member); }};
}

template <class Sub>
Field sub_bool(std::string key, Sub RunConfig::*sub, bool Sub::*member) {
  return {key, [key, sub, member](RunConfig& c, const std::string& v) { (c.*sub).*member = parse_bool(key, v); },
          [sub, member](const RunConfig& c) { return nlohmann::json((c.*sub).*member); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"mode", [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); },
       [](const RunConfig& c) { return nlohmann::json(mode_name(c.mode)); }},
      {"plan.model", [](RunConfig& c, const std::string& v) { c.plan_model = parse_plan_model(v); },
       [](const RunConfig& c) { return nlohmann::json(plan_model_name(c.plan_model)); }},
      {"task", [](RunConfig& c, const std::string& v) { c.task = envs::parse_task(v); },
       [](const RunConfig& c) { return nlohmann::json(std::string(envs::task_name(c.task))); }},
      number("seed", &RunConfig::seed),
      number("total_env_steps", &RunConfig::total_env_steps),
      number("seed_episodes", &RunConfig::seed_episodes),
      {"action_repeat",
       [](RunConfig& c, const std::string& v) {
         c.action_repeat = v == "auto" ? 0 : parse_number<int>("action_repeat", v);
         if (v != "auto" && c.action_repeat < 1) throw ConfigError("action_repeat must be >= 1 or auto");
       },
       [](const RunConfig& c) { return c.action_repeat == 0 ? nlohmann::json("auto") : nlohmann::json(c.action_repeat); }},
      number("update_frequency", &RunConfig::update_frequency),
      number("batch_size", &RunConfig::batch_size),
      number("lr", &RunConfig::lr),
      {"precision",
       [](RunConfig& c, const std::string& v) {
         if (v != "f32" && v != "f64") throw ConfigError("precision must be f32 or f64");
         c.double_precision = v == "f64";
       },
       [](const RunConfig& c) { return nlohmann::json(c.double_precision ? "f64" : "f32"); }},
      number("replay.capacity", &RunConfig::replay_capacity),
      number("net.latent_dim", &RunConfig::latent_dim),
      {"net.hidden", [](RunConfig& c, const std::string& v) { c.hidden_dims = parse_dims("net.hidden", v); },
       [](const RunConfig& c) { return nlohmann::json(join_dims(c.hidden_dims)); }},
      sub_number("model.horizon", &RunConfig::model, &ModelLossConfig::horizon),
      sub_number("model.rollout_discount", &RunConfig::model, &ModelLossConfig::rollout_discount),
      sub_number("model.reward_coef", &RunConfig::model, &ModelLossConfig::reward_coef),
      sub_number("model.consistency_coef", &RunConfig::model, &ModelLossConfig::consistency_coef),
      {"model.latent_loss", [](RunConfig& c, const std::string& v) { c.model.latent_loss = parse_latent_loss(v); },
       [](const RunConfig& c) { return nlohmann::json(std::string(latent_loss_name(c.model.latent_loss))); }},
      number("model.tau", &RunConfig::tau),
      sub_number("td.gamma", &RunConfig::td, &TdConfig::gamma),
      sub_number("td.nstep", &RunConfig::td, &TdConfig::nstep),
      sub_number("td.critic_lr", &RunConfig::td, &TdConfig::critic_lr),
      sub_number("td.actor_lr", &RunConfig::td, &TdConfig::actor_lr),
      sub_number("td.tau", &RunConfig::td, &TdConfig::tau),
      sub_number("td.target_noise_clip", &RunConfig::td, &TdConfig::target_noise_clip),
      sub_bool("td.critic_updates_encoder", &RunConfig::td, &TdConfig::critic_updates_encoder),
      {"explore.schedule",
       [](RunConfig& c, const std::string& v) { c.explore = ExplorationSchedule::parse(v, c.explore.clip); },
       [](const RunConfig& c) { return nlohmann::json(c.explore.to_string()); }},
      sub_number("explore.clip", &RunConfig::explore, &ExplorationSchedule::clip),
      sub_number("mppi.horizon", &RunConfig::mppi, &MppiConfig::horizon),
      sub_number("mppi.population", &RunConfig::mppi, &MppiConfig::population),
      sub_number("mppi.elites", &RunConfig::mppi, &MppiConfig::elites),
      sub_number("mppi.iterations", &RunConfig::mppi, &MppiConfig::iterations),
      sub_number("mppi.temperature", &RunConfig::mppi, &MppiConfig::temperature),
      sub_number("mppi.momentum", &RunConfig::mppi, &MppiConfig::momentum),
      sub_bool("mppi.reuse_solution", &RunConfig::mppi, &MppiConfig::reuse_solution),
      sub_number("mppi.std_init", &RunConfig::mppi, &MppiConfig::std_init),
      sub_number("mppi.std_floor", &RunConfig::mppi, &MppiConfig::std_floor),
      sub_number("ensemble.members", &RunConfig::ensemble, &EnsembleSpec::members),
      {"ensemble.hidden",
       [](RunConfig& c, const std::string& v) { c.ensemble.hidden_dims = parse_dims("ensemble.hidden", v); },
       [](const RunConfig& c) { return nlohmann::json(join_dims(c.ensemble.hidden_dims)); }},
      number("eval_every", &RunConfig::eval_every),
      number("eval_episodes", &RunConfig::eval_episodes),
      number("early_stop_return", &RunConfig::early_stop_return),
      number("checkpoint_every", &RunConfig::checkpoint_every),
      {"run_dir", [](RunConfig& c, const std::string& v) { c.run_dir = v; },
       [](const RunConfig& c) { return nlohmann::json(c.run_dir); }},
  };
  return f;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : detail::fields()) k.push_back(f.key);
  return k;
}

inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(c, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// "key=value" as given on the command line.
inline void set_assignment(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  set_option(c, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
}

inline void apply_config_text(RunConfig& c, std::istream& is) {
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config_text(c, in);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::fields()) j[f.key] = f.get(c);
  j["action_repeat_resolved"] = c.resolved_action_repeat();
  return j;
}

/// Rebuilds a config from its JSON echo (checkpoints store one).
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& f : detail::fields()) {
    if (!j.contains(f.key)) continue;
    const auto& v = j.at(f.key);
    f.set(c, v.is_string() ? v.get<std::string>() : v.dump());
  }
  return c;
}

}  // namespace tcrl
