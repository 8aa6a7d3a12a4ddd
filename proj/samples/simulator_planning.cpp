// Swings the pendulum up with MPPI, using a copy of the simulator as the model.
// Usage: simulator_planning [seed] [episodes]

#include <cstdlib>
#include <iostream>

#include "tcrl/harness.hpp"

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
  const int episodes = argc > 2 ? std::atoi(argv[2]) : 1;

  tcrl::MppiConfig cfg;  // 512 samples, 64 elites, 6 iterations
  const int repeat = 4;
  tcrl::Rng rng = tcrl::Rng::substream(seed, "planner");
  std::optional<tcrl::PlanSolution> prev;

  auto stats = tcrl::run_episodes(
      tcrl::envs::Task::pendulum_swingup, repeat, episodes, seed, [&](int) { prev.reset(); },
      [&](const tcrl::envs::EnvState& env, const std::vector<double>& obs) {
        tcrl::SimulatorModel model(env, repeat);
        auto res = tcrl::plan_action(model, obs, prev ? &*prev : nullptr, cfg, rng);
        prev = std::move(res.solution);
        return res.action;
      });
  for (double r : stats.returns) std::cout << "episode return " << r << '\n';
  std::cout << "mean " << stats.mean << " +- " << stats.std << '\n';
}
