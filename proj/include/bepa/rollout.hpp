#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bepa/rlcore.hpp"

namespace bepa::rollout {

struct EpisodeConfig {
  int history_k = 3;
  double temperature = 1.0;
  bool greedy = false;
};

// Pops leading plan subgoals the state already satisfies ("goto:<s>" once
// the screen is reached, "set:<k>=<v>" once the key holds; "finish" stays).
void advance_plan(std::vector<std::string>& remaining,
                  const env::EnvState& state);

// Runs one full episode, building a context per step from the observation,
// the recent-action window, and the remaining plan when one is attached.
Trajectory run_episode(const env::ScreenGraph& graph,
                       const env::TaskSpec& task,
                       const policy::PolicyParams& params,
                       std::uint64_t env_seed, std::uint64_t action_seed,
                       const EpisodeConfig& config,
                       const std::vector<std::string>* plan = nullptr);

// Test hook simulating worker faults: invoked before each rollout attempt
// and may throw.
using FaultInjector =
    std::function<void(const std::string& task_id, int slot, int attempt)>;

struct CollectConfig {
  int group_size = 8;
  int parallelism = 1;
  std::uint64_t master_seed = 0;
  int iteration = 0;
  EpisodeConfig episode;
  FaultInjector fault;  // optional
};

// Collects group_size on-policy rollouts per task. Every (iteration, task,
// slot) triple gets its own derived env and sampling seeds, so the merged
// result is invariant to the parallelism degree. A failed rollout is
// retried once, then recorded as an empty reward-0 trajectory with an error
// flag.
std::vector<rl::RolloutGroup> collect_groups(
    const env::ScreenGraph& graph, std::span<const env::TaskSpec> batch,
    const policy::PolicyParams& params, const CollectConfig& config);

}  // namespace bepa::rollout
