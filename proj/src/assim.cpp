#include "bepa/assim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "bepa/errors.hpp"
#include "bepa/serde.hpp"

namespace bepa::assim {

using json = nlohmann::json;

const char* cache_provenance_name(CacheProvenance p) {
  return p == CacheProvenance::Level1 ? "LEVEL1" : "LEVEL2";
}

CacheProvenance parse_cache_provenance(const std::string& name) {
  if (name == "LEVEL1") return CacheProvenance::Level1;
  if (name == "LEVEL2") return CacheProvenance::Level2;
  throw IoError("unknown cache provenance '" + name + "'");
}

const char* update_rule_name(UpdateRule r) {
  switch (r) {
    case UpdateRule::Random:
      return "random";
    case UpdateRule::HighestLogProb:
      return "highest-logprob";
    case UpdateRule::ShortestStep:
      return "shortest-step";
  }
  return "?";
}

UpdateRule parse_update_rule(const std::string& name) {
  if (name == "random") return UpdateRule::Random;
  if (name == "highest-logprob") return UpdateRule::HighestLogProb;
  if (name == "shortest-step") return UpdateRule::ShortestStep;
  throw ConfigError("unknown update rule '" + name + "'");
}

namespace {

// Plan-free injection view: strip the plan from each context and re-score.
// A step that cannot be scored plan-free keeps its generation-time log-prob
// and raises the entry's fallback flag.
Trajectory make_injection_view(const Trajectory& generated,
                               const policy::PolicyParams& params,
                               bool* fallback) {
  Trajectory view = generated;
  view.provenance = SlotProvenance::Cached;
  for (auto& step : view.steps) {
    step.ctx.plan.clear();
    try {
      step.logprob = policy::logprob(params, step.ctx, step.action);
    } catch (const ScoringError&) {
      if (fallback) *fallback = true;
    }
  }
  return view;
}

}  // namespace

SelfRollResult level1_selfroll(
    const env::ScreenGraph& graph,
    const std::map<std::string, env::TaskSpec>& tasks,
    std::span<const expert::ExpertTrace> expert_set,
    const policy::PolicyParams& params, int attempts_per_task,
    std::uint64_t master_seed, const rollout::EpisodeConfig& episode) {
  if (attempts_per_task < 1) {
    throw ConfigError("attempts_per_task must be >= 1");
  }
  SelfRollResult result;
  for (const auto& trace : expert_set) {
    if (!trace.success) continue;
    ++result.expert_tasks;
    auto task_it = tasks.find(trace.task_id);
    if (task_it == tasks.end()) {
      throw ConfigError("expert trace for unknown task '" + trace.task_id +
                        "'");
    }
    const env::TaskSpec& task = task_it->second;
    const expert::Plan plan = expert::extract_plan(trace);
    const std::uint64_t task_hash = fnv1a(trace.task_id);

    for (int attempt = 0; attempt < attempts_per_task; ++attempt) {
      try {
        Trajectory traj = rollout::run_episode(
            graph, task, params,
            derive_seed(master_seed, "l1-env", task_hash,
                        static_cast<std::uint64_t>(attempt)),
            derive_seed(master_seed, "l1-act", task_hash,
                        static_cast<std::uint64_t>(attempt)),
            episode, &plan.subgoals);
        if (traj.reward != 1.0) continue;

        CacheEntry entry;
        entry.provenance = CacheProvenance::Level1;
        entry.iteration_written = 0;
        entry.update_count = 0;
        entry.injection =
            make_injection_view(traj, params, &entry.plan_fallback);
        entry.trajectory = std::move(traj);
        result.seeds.emplace(trace.task_id, std::move(entry));
        ++result.seeded_tasks;
        break;
      } catch (const EnvError&) {
        // per-task environment failures do not abort the sweep
      }
    }
  }
  result.seed_success_rate =
      result.expert_tasks == 0
          ? 0.0
          : static_cast<double>(result.seeded_tasks) /
                static_cast<double>(result.expert_tasks);
  return result;
}

GuidanceCache init_cache(const SelfRollResult& self_rolled) {
  GuidanceCache cache;
  for (const auto& [task_id, entry] : self_rolled.seeds) {
    if (entry.trajectory.reward != 1.0) {
      throw ContractError("cache seed for '" + task_id + "' is unverified");
    }
    auto [it, inserted] = cache.entries.emplace(task_id, entry);
    if (!inserted) {
      std::cerr << "warning: duplicate self-rolled entry for task '"
                << task_id << "', keeping the first\n";
    }
  }
  return cache;
}

GuidanceCache init_cache_from_converted(
    const env::ScreenGraph& graph,
    const std::map<std::string, env::TaskSpec>& tasks,
    std::span<const expert::ConvertedTrace> converted,
    const policy::PolicyParams& params) {
  GuidanceCache cache;
  for (const auto& conv : converted) {
    auto task_it = tasks.find(conv.task_id);
    if (task_it == tasks.end()) {
      throw ConfigError("converted trace for unknown task '" + conv.task_id +
                        "'");
    }
    Trajectory traj =
        expert::converted_to_trajectory(conv, task_it->second, graph, params);
    if (traj.reward != 1.0) continue;  // only verified traces are cached
    traj.provenance = SlotProvenance::Cached;

    CacheEntry entry;
    entry.provenance = CacheProvenance::Level1;
    entry.trajectory = traj;
    entry.injection = std::move(traj);
    auto [it, inserted] = cache.entries.emplace(conv.task_id, std::move(entry));
    if (!inserted) {
      std::cerr << "warning: duplicate converted entry for task '"
                << conv.task_id << "', keeping the first\n";
    }
  }
  return cache;
}

std::size_t select_update(std::span<const Trajectory> successes,
                          UpdateRule rule,
                          const policy::PolicyParams& params, Rng& rng) {
  if (successes.empty()) {
    throw ContractError("select_update on an empty success set");
  }
  if (successes.size() == 1) return 0;
  switch (rule) {
    case UpdateRule::Random:
      return static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(successes.size())));
    case UpdateRule::HighestLogProb: {
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t i = 0; i < successes.size(); ++i) {
        double acc = 0.0;
        for (const auto& step : successes[i].steps) {
          acc += policy::logprob(params, step.ctx, step.action);
        }
        const double score =
            successes[i].steps.empty()
                ? 0.0
                : acc / static_cast<double>(successes[i].steps.size());
        if (score > best_score) {
          best_score = score;
          best = i;
        }
      }
      return best;
    }
    case UpdateRule::ShortestStep: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < successes.size(); ++i) {
        if (successes[i].steps.size() < successes[best].steps.size()) {
          best = i;
        }
      }
      return best;
    }
  }
  return 0;
}

void apply_cache_update(GuidanceCache& cache, const std::string& task_id,
                        const Trajectory& trajectory, int iteration) {
  if (trajectory.reward != 1.0) {
    throw ContractError("cache update with an unverified trajectory for '" +
                        task_id + "'");
  }
  CacheEntry& entry = cache.entries[task_id];
  if (iteration < entry.iteration_written) {
    throw ContractError("cache update iteration went backwards for '" +
                        task_id + "'");
  }
  entry.trajectory = trajectory;
  entry.injection = trajectory;
  entry.injection.provenance = SlotProvenance::Cached;
  entry.provenance = CacheProvenance::Level2;
  entry.iteration_written = iteration;
  entry.update_count += 1;
  entry.plan_fallback = false;
}

bool replace_on_failure(rl::RolloutGroup& group, const GuidanceCache& cache,
                        const std::string& task_id) {
  for (auto p : group.provenance) {
    if (p != SlotProvenance::OnPolicy) {
      throw ContractError("replace_on_failure expects a fully on-policy group");
    }
  }
  for (double r : group.rewards) {
    if (r != 0.0) return false;
  }
  auto it = cache.entries.find(task_id);
  if (it == cache.entries.end()) return false;

  group.trajectories[0] = it->second.injection;
  group.rewards[0] = 1.0;
  group.provenance[0] = SlotProvenance::Cached;
  return true;
}

IterationStats bepa_iteration(const env::ScreenGraph& graph,
                              std::span<const env::TaskSpec> batch,
                              policy::PolicyParams& params,
                              GuidanceCache& cache,
                              const IterationConfig& config, int iteration) {
  config.train.validate();
  config.clip.validate();

  rollout::CollectConfig collect;
  collect.group_size = config.train.group_size;
  collect.parallelism = config.parallelism;
  collect.master_seed = config.master_seed;
  collect.iteration = iteration;
  collect.episode.history_k = config.history_k;
  collect.episode.temperature = config.train.temperature;
  collect.fault = config.fault;

  IterationStats stats;
  stats.groups = rollout::collect_groups(graph, batch, params, collect);

  std::vector<double> grad_sum(params.feature_dim, 0.0);
  double entropy_sum = 0.0, onpolicy_steps = 0.0;
  double succ_lp_sum = 0.0, succ_lp_steps = 0.0;
  double cached_lp_sum = 0.0, cached_lp_steps = 0.0;
  double reward_sum = 0.0, reward_count = 0.0;

  for (std::size_t gi = 0; gi < stats.groups.size(); ++gi) {
    rl::RolloutGroup& group = stats.groups[gi];
    const env::TaskSpec& task = batch[gi];

    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      reward_sum += group.rewards[i];
      reward_count += 1.0;
      for (const auto& step : group.trajectories[i].steps) {
        entropy_sum += step.entropy;
        onpolicy_steps += 1.0;
        if (group.rewards[i] == 1.0) {
          succ_lp_sum += step.logprob;
          succ_lp_steps += 1.0;
        }
      }
    }

    if (cache.has(task.task_id)) ++stats.tasks_with_cache;

    std::vector<Trajectory> successes;
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      if (group.rewards[i] == 1.0) successes.push_back(group.trajectories[i]);
    }

    if (!successes.empty()) {
      ++stats.onpolicy_successes;
      stats.succeeded_tasks.push_back(task.task_id);
      if (config.dynamic_updates) {
        Rng rule_rng(derive_seed(config.master_seed, "cache-update",
                                 static_cast<std::uint64_t>(iteration),
                                 fnv1a(task.task_id)));
        const std::size_t pick =
            select_update(successes, config.rule, params, rule_rng);
        apply_cache_update(cache, task.task_id, successes[pick], iteration);
        ++stats.cache_updates;
        stats.updated_tasks.push_back(task.task_id);
      }
    } else if (config.injection) {
      if (replace_on_failure(group, cache, task.task_id)) {
        ++stats.replacements;
        stats.replaced_tasks.push_back(task.task_id);
        for (const auto& step : group.trajectories[0].steps) {
          cached_lp_sum += policy::logprob(params, step.ctx, step.action);
          cached_lp_steps += 1.0;
        }
      }
    }

    rl::ObjectiveResult res = rl::bepa_objective(group, params, config.clip);
    stats.objective_value += res.value;
    for (int d = 0; d < params.feature_dim; ++d) grad_sum[d] += res.gradient[d];
  }

  const double inv_groups =
      stats.groups.empty() ? 0.0 : 1.0 / static_cast<double>(stats.groups.size());
  stats.objective_value *= inv_groups;
  for (double& g : grad_sum) g *= inv_groups;

  if (config.sft_lambda != 0.0 && config.sft_traces) {
    std::vector<expert::ConvertedTrace> batch_conv;
    for (const auto& task : batch) {
      auto it = config.sft_traces->find(task.task_id);
      if (it != config.sft_traces->end()) batch_conv.push_back(it->second);
    }
    rl::SftResult sft = rl::sft_loss(params, batch_conv);
    stats.objective_value -= config.sft_lambda * sft.loss;
    for (int d = 0; d < params.feature_dim; ++d) {
      grad_sum[d] -= config.sft_lambda * sft.gradient[d];
    }
  }

  params = rl::sgd_step(params, grad_sum, config.train.learning_rate);

  stats.mean_reward = reward_count > 0.0 ? reward_sum / reward_count : 0.0;
  stats.mean_entropy =
      onpolicy_steps > 0.0 ? entropy_sum / onpolicy_steps : 0.0;
  stats.succ_logprob_onpolicy =
      succ_lp_steps > 0.0 ? succ_lp_sum / succ_lp_steps : 0.0;
  stats.succ_logprob_cached =
      cached_lp_steps > 0.0 ? cached_lp_sum / cached_lp_steps : 0.0;
  return stats;
}

void save_cache(const std::string& path, const GuidanceCache& cache) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& [task_id, entry] : cache.entries) {
    json j{{"task", task_id},
           {"provenance", cache_provenance_name(entry.provenance)},
           {"iteration", entry.iteration_written},
           {"update_count", entry.update_count},
           {"plan_fallback", entry.plan_fallback},
           {"trajectory", entry.trajectory},
           {"injection", entry.injection}};
    out << j.dump() << "\n";
  }
}

GuidanceCache load_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  GuidanceCache cache;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ": bad record at line " + std::to_string(lineno) +
                    ": " + e.what());
    }
    CacheEntry entry;
    entry.provenance =
        parse_cache_provenance(j.at("provenance").get<std::string>());
    entry.iteration_written = j.at("iteration").get<int>();
    entry.update_count = j.at("update_count").get<int>();
    entry.plan_fallback = j.at("plan_fallback").get<bool>();
    j.at("trajectory").get_to(entry.trajectory);
    j.at("injection").get_to(entry.injection);
    cache.entries[j.at("task").get<std::string>()] = std::move(entry);
  }
  return cache;
}

}  // namespace bepa::assim
