#include "bepa/rollout.hpp"

#include <atomic>
#include <thread>

#include "bepa/errors.hpp"

namespace bepa::rollout {

void advance_plan(std::vector<std::string>& remaining,
                  const env::EnvState& state) {
  while (!remaining.empty()) {
    const std::string& front = remaining.front();
    bool satisfied = false;
    if (front.rfind("goto:", 0) == 0) {
      satisfied = state.current_screen == std::stoi(front.substr(5));
    } else if (front.rfind("set:", 0) == 0) {
      auto body = front.substr(4);
      auto eq = body.find('=');
      auto it = state.state_keys.find(body.substr(0, eq));
      satisfied =
          it != state.state_keys.end() && it->second == body.substr(eq + 1);
    }
    if (!satisfied) break;
    remaining.erase(remaining.begin());
  }
}

Trajectory run_episode(const env::ScreenGraph& graph,
                       const env::TaskSpec& task,
                       const policy::PolicyParams& params,
                       std::uint64_t env_seed, std::uint64_t action_seed,
                       const EpisodeConfig& config,
                       const std::vector<std::string>* plan) {
  Trajectory traj;
  traj.task_id = task.task_id;
  traj.env_seed = env_seed;

  Rng action_rng(action_seed);
  auto [state, obs] = env::reset(graph, task, env_seed);
  std::vector<std::string> remaining;
  if (plan) {
    remaining = *plan;
    advance_plan(remaining, state);
  }
  std::vector<env::ActionToken> history;

  double reward = 0.0;
  while (!state.done) {
    policy::Context ctx;
    ctx.obs = obs;
    ctx.task_id = task.task_id;
    ctx.history = history;
    if (plan) ctx.plan = remaining;

    policy::ActionDist dist =
        policy::action_dist(params, ctx, config.temperature);
    std::size_t pick = 0;
    if (config.greedy) {
      for (std::size_t i = 1; i < dist.probs.size(); ++i) {
        if (dist.probs[i] > dist.probs[pick]) pick = i;
      }
    } else {
      pick = static_cast<std::size_t>(action_rng.categorical(dist.probs));
    }

    double step_entropy = 0.0;
    for (double p : dist.probs) {
      if (p > 0.0) step_entropy -= p * std::log(p);
    }

    TrajStep ts;
    ts.ctx = std::move(ctx);
    ts.action = dist.actions[pick];
    ts.logprob = dist.logprobs[pick];
    ts.entropy = step_entropy;

    env::StepOutcome out = env::step(graph, task, state, ts.action);
    reward = out.reward;
    obs = std::move(out.observation);

    history.insert(history.begin(), ts.action);
    if (static_cast<int>(history.size()) > config.history_k) {
      history.resize(config.history_k);
    }
    if (plan) advance_plan(remaining, state);
    traj.steps.push_back(std::move(ts));
  }
  traj.reward = reward;
  return traj;
}

std::vector<rl::RolloutGroup> collect_groups(
    const env::ScreenGraph& graph, std::span<const env::TaskSpec> batch,
    const policy::PolicyParams& params, const CollectConfig& config) {
  if (config.parallelism < 1) {
    throw ConfigError("parallelism degree must be >= 1");
  }
  const int n_tasks = static_cast<int>(batch.size());
  const int n_jobs = n_tasks * config.group_size;
  std::vector<Trajectory> results(n_jobs);

  auto run_job = [&](int job) {
    const int task_idx = job / config.group_size;
    const int slot = job % config.group_size;
    const env::TaskSpec& task = batch[task_idx];
    const std::uint64_t task_hash = fnv1a(task.task_id);
    const std::uint64_t env_seed =
        derive_seed(config.master_seed, "rollout-env",
                    static_cast<std::uint64_t>(config.iteration), task_hash,
                    static_cast<std::uint64_t>(slot));
    const std::uint64_t act_seed =
        derive_seed(config.master_seed, "rollout-act",
                    static_cast<std::uint64_t>(config.iteration), task_hash,
                    static_cast<std::uint64_t>(slot));

    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        if (config.fault) config.fault(task.task_id, slot, attempt);
        results[job] = run_episode(graph, task, params, env_seed, act_seed,
                                   config.episode);
        return;
      } catch (const std::exception&) {
        if (attempt == 1) {
          Trajectory failed;
          failed.task_id = task.task_id;
          failed.reward = 0.0;
          failed.error_flag = true;
          failed.env_seed = env_seed;
          results[job] = std::move(failed);
        }
      }
    }
  };

  if (config.parallelism == 1 || n_jobs <= 1) {
    for (int job = 0; job < n_jobs; ++job) run_job(job);
  } else {
    std::atomic<int> next_job{0};
    const int workers = std::min(config.parallelism, n_jobs);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const int job = next_job.fetch_add(1);
          if (job >= n_jobs) return;
          run_job(job);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // merge in (task, slot) order
  std::vector<rl::RolloutGroup> groups;
  groups.reserve(n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    rl::RolloutGroup group;
    group.task_id = batch[t].task_id;
    for (int s = 0; s < config.group_size; ++s) {
      Trajectory& traj = results[t * config.group_size + s];
      group.rewards.push_back(traj.reward);
      group.provenance.push_back(SlotProvenance::OnPolicy);
      group.trajectories.push_back(std::move(traj));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace bepa::rollout
