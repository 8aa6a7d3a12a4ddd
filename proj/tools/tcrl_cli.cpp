#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcrl/harness.hpp"

namespace {

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::string task, run_dir, latent_loss, action_repeat;
  std::optional<std::uint64_t> seed;
  std::optional<long long> steps;
  std::optional<double> consistency_coef;
  std::optional<int> rollout_horizon, nstep;
  bool f64 = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("-c,--config", f.config_file, "key = value config file");
  app->add_option("--set", f.sets, "override, key=value (repeatable)");
  app->add_option("--task", f.task, "pendulum_swingup | cartpole_balance | cartpole_swingup | pointmass_reacher");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--steps", f.steps, "total environment steps");
  app->add_option("--run-dir", f.run_dir, "output directory");
  app->add_option("--action-repeat", f.action_repeat, "integer or auto");
  app->add_option("--latent-loss", f.latent_loss, "cosine | mse | none");
  app->add_option("--consistency-coef", f.consistency_coef, "weight of the latent loss");
  app->add_option("--rollout-horizon", f.rollout_horizon, "model rollout horizon H");
  app->add_option("--nstep", f.nstep, "n of the n-step TD target");
  app->add_flag("--f64", f.f64, "train in double precision");
}

tcrl::RunConfig build_config(const CommonFlags& f, tcrl::RunConfig cfg) {
  if (!f.config_file.empty()) tcrl::apply_config_file(cfg, f.config_file);
  auto set = [&](const std::string& k, const std::string& v) { tcrl::set_option(cfg, k, v); };
  if (!f.task.empty()) set("task", f.task);
  if (f.seed) set("seed", std::to_string(*f.seed));
  if (f.steps) set("total_env_steps", std::to_string(*f.steps));
  if (!f.run_dir.empty()) set("run_dir", f.run_dir);
  if (!f.action_repeat.empty()) set("action_repeat", f.action_repeat);
  if (!f.latent_loss.empty()) set("model.latent_loss", f.latent_loss);
  if (f.consistency_coef) cfg.model.consistency_coef = *f.consistency_coef;
  if (f.rollout_horizon) cfg.model.horizon = *f.rollout_horizon;
  if (f.nstep) cfg.td.nstep = *f.nstep;
  if (f.f64) cfg.double_precision = true;
  for (const auto& kv : f.sets) tcrl::set_assignment(cfg, kv);
  cfg.validate();
  return cfg;
}

nlohmann::json eval_json(const tcrl::EvalStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}, {"returns", s.returns}};
}

nlohmann::json summary_json(const tcrl::RunSummary& s) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [step, e] : s.evals) evals.push_back({{"env_step", step}, {"eval", eval_json(e)}});
  return {{"env_steps", s.env_steps},         {"updates", s.updates},
          {"metric_rows", s.metric_rows},     {"stopped_early", s.stopped_early},
          {"checkpoint", s.last_checkpoint},  {"evals", evals},
          {"best_eval", s.evals.empty() ? 0.0 : s.best_eval()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal-consistency latent models: policy learning, planning, evaluation"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string resume_from;
  auto* train = app.add_subcommand("train", "train a policy on latent states (mode tcrl by default)");
  add_common(train, train_flags);
  train->add_option("--resume", resume_from, "continue from a checkpoint (only --run-dir, --steps and --set apply)");

  CommonFlags plan_flags;
  std::string plan_model = "tcrl";
  auto* plan = app.add_subcommand("plan", "learn a dynamics model and act with MPPI");
  add_common(plan, plan_flags);
  plan->add_option("--model", plan_model, "tcrl | ensdet | pets | simulator")
      ->check(CLI::IsMember({"tcrl", "ensdet", "pets", "simulator"}));

  std::string ckpt, eval_task;
  int eval_episodes = 10;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with deterministic episodes");
  eval->add_option("checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--episodes", eval_episodes, "number of episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--task", eval_task, "task override (must match the checkpoint's dimensions)");

  CommonFlags ablate_flags;
  std::string grid = "all";
  auto* ablate = app.add_subcommand("ablate", "run a named sweep grid: horizon, nstep, latent, consistency, all");
  add_common(ablate, ablate_flags);
  ablate->add_option("--grid", grid, "sweep name");

  std::string metrics_path, csv_dir;
  auto* csv = app.add_subcommand("emit-csv", "split metrics.jsonl into one CSV per metric");
  csv->add_option("metrics", metrics_path, "metrics.jsonl")->required();
  csv->add_option("--out", csv_dir, "output directory (default: next to the metrics file)");

  auto* keys = app.add_subcommand("keys", "list config keys with their defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every malformed command line exits 2
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (!resume_from.empty()) {
        std::vector<std::string> ov = train_flags.sets;
        if (!train_flags.run_dir.empty()) ov.push_back("run_dir=" + train_flags.run_dir);
        if (train_flags.steps) ov.push_back("total_env_steps=" + std::to_string(*train_flags.steps));
        std::cout << summary_json(tcrl::resume(resume_from, ov)).dump(2) << '\n';
        return 0;
      }
      tcrl::RunConfig base;
      base.mode = tcrl::Mode::tcrl;
      const auto cfg = build_config(train_flags, base);
      std::cout << summary_json(tcrl::train(cfg)).dump(2) << '\n';
    } else if (*plan) {
      tcrl::RunConfig base;
      base.plan_model = tcrl::parse_plan_model(plan_model);
      base.mode = base.plan_model == tcrl::PlanModel::tcrl ? tcrl::Mode::tcrl_dynamics : tcrl::Mode::baseline_plan;
      const auto cfg = build_config(plan_flags, base);
      std::cout << summary_json(tcrl::train(cfg)).dump(2) << '\n';
    } else if (*eval) {
      std::optional<std::string> task;
      if (!eval_task.empty()) task = eval_task;
      std::cout << eval_json(tcrl::evaluate_checkpoint(ckpt, eval_episodes, eval_seed, task)).dump(2) << '\n';
    } else if (*ablate) {
      const auto base = build_config(ablate_flags, tcrl::RunConfig{});
      nlohmann::json all = nlohmann::json::object();
      for (const auto& run : tcrl::ablation_grid(grid)) {
        tcrl::RunConfig cfg = base;
        for (const auto& kv : run.overrides) tcrl::set_assignment(cfg, kv);
        cfg.run_dir = (std::filesystem::path(base.run_dir) / run.name).string();
        cfg.validate();
        std::cerr << "ablate: " << run.name << " -> " << cfg.run_dir << '\n';
        all[run.name] = summary_json(tcrl::train(cfg));
      }
      std::filesystem::create_directories(base.run_dir);
      std::ofstream(std::filesystem::path(base.run_dir) / "ablation_summary.json") << all.dump(2) << '\n';
      std::cout << all.dump(2) << '\n';
    } else if (*csv) {
      const auto out = csv_dir.empty() ? std::filesystem::path(metrics_path).parent_path() / "csv" : std::filesystem::path(csv_dir);
      for (const auto& p : tcrl::emit_csv(metrics_path, out)) std::cout << p.string() << '\n';
    } else if (*keys) {
      std::cout << tcrl::config_to_json(tcrl::RunConfig{}).dump(2) << '\n';
    }
  } catch (const tcrl::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const tcrl::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
