#include "bepa/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "bepa/errors.hpp"

namespace bepa::baselines {

void ShapingConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("shaping gamma must be positive");
}

double luffy_shape(double w, double gamma) {
  if (w < 0.0) throw ContractError("shaping weight must be non-negative");
  if (!(gamma > 0.0)) throw ConfigError("shaping gamma must be positive");
  return w / (w + gamma);
}

rl::RolloutGroup luffy_build_group(const std::string& task_id,
                                   std::vector<Trajectory> onpolicy,
                                   const Trajectory* offpolicy) {
  rl::RolloutGroup group;
  group.task_id = task_id;
  if (offpolicy) {
    group.trajectories.push_back(*offpolicy);
    group.trajectories.back().provenance = SlotProvenance::OffPolicyExpert;
    group.rewards.push_back(offpolicy->reward);
    group.provenance.push_back(SlotProvenance::OffPolicyExpert);
  }
  for (auto& traj : onpolicy) {
    group.rewards.push_back(traj.reward);
    group.provenance.push_back(SlotProvenance::OnPolicy);
    group.trajectories.push_back(std::move(traj));
  }
  group.validate();
  return group;
}

rl::ObjectiveResult luffy_objective(const rl::RolloutGroup& group,
                                    const policy::PolicyParams& params,
                                    const rl::ClipConfig& clip,
                                    const ShapingConfig& shaping,
                                    std::vector<rl::TokenStat>* stats) {
  group.validate();
  shaping.validate();
  rl::ObjectiveResult result;
  result.gradient.assign(params.feature_dim, 0.0);

  std::size_t total_steps = 0;
  for (const auto& traj : group.trajectories) total_steps += traj.steps.size();
  if (total_steps == 0) return result;
  const double inv_z = 1.0 / static_cast<double>(total_steps);

  rl::AdvantageSet adv =
      rl::compute_advantages(group.rewards, clip.adv_epsilon);

  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const double a = adv.values[i];
    const bool off_slot =
        group.provenance[i] == SlotProvenance::OffPolicyExpert;
    for (const auto& step : group.trajectories[i].steps) {
      const double new_lp = policy::logprob(params, step.ctx, step.action);
      if (off_slot) {
        // denominator 1 and no clipping: the token weight is f(pi(a_t))
        const double p = std::exp(new_lp);
        const double shaped = luffy_shape(p, shaping.gamma);
        result.value += inv_z * shaped * a;
        // d/dtheta f(p)*A = A * gamma/(p+gamma)^2 * p * grad_logprob
        const double w =
            inv_z * a * shaping.gamma / ((p + shaping.gamma) * (p + shaping.gamma)) * p;
        const policy::FeatureVector g =
            policy::grad_logprob(params, step.ctx, step.action);
        for (const auto& [idx, val] : g.entries) {
          result.gradient[idx] += w * val;
        }
        if (stats) stats->push_back({p, shaped, false, a});
      } else {
        if (!std::isfinite(step.logprob)) {
          throw ContractError("on-policy step without an old log-prob");
        }
        const double r = rl::importance_ratio(new_lp, step.logprob);
        const double clamped =
            std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
        const double unclipped = r * a;
        const double clipped = clamped * a;
        result.value += inv_z * std::min(unclipped, clipped);
        const bool clip_active = clipped < unclipped;
        if (!clip_active) {
          const policy::FeatureVector g =
              policy::grad_logprob(params, step.ctx, step.action);
          const double w = inv_z * r * a;
          for (const auto& [idx, val] : g.entries) {
            result.gradient[idx] += w * val;
          }
        }
        if (stats) stats->push_back({r, clamped, clip_active, a});
      }
    }
  }
  return result;
}

LuffyIterationStats luffy_iteration(
    const env::ScreenGraph& graph, std::span<const env::TaskSpec> batch,
    policy::PolicyParams& params,
    const std::map<std::string, Trajectory>& offpolicy,
    const assim::IterationConfig& config, const ShapingConfig& shaping,
    int iteration) {
  config.train.validate();
  config.clip.validate();
  shaping.validate();

  LuffyIterationStats stats;
  std::vector<double> grad_sum(params.feature_dim, 0.0);
  double reward_sum = 0.0, reward_count = 0.0;
  double entropy_sum = 0.0, entropy_steps = 0.0;

  for (const auto& task : batch) {
    auto off_it = offpolicy.find(task.task_id);
    const bool has_off = off_it != offpolicy.end();

    rollout::CollectConfig collect;
    collect.group_size =
        has_off ? config.train.group_size - 1 : config.train.group_size;
    collect.parallelism = config.parallelism;
    collect.master_seed = config.master_seed;
    collect.iteration = iteration;
    collect.episode.history_k = config.history_k;
    collect.episode.temperature = config.train.temperature;
    collect.fault = config.fault;

    std::vector<rl::RolloutGroup> collected =
        rollout::collect_groups(graph, std::span(&task, 1), params, collect);
    std::vector<Trajectory> onpolicy =
        std::move(collected.front().trajectories);

    for (const auto& traj : onpolicy) {
      reward_sum += traj.reward;
      reward_count += 1.0;
      for (const auto& step : traj.steps) {
        entropy_sum += step.entropy;
        entropy_steps += 1.0;
      }
    }

    rl::RolloutGroup group = luffy_build_group(
        task.task_id, std::move(onpolicy), has_off ? &off_it->second : nullptr);
    if (has_off) ++stats.offpolicy_slots;

    rl::ObjectiveResult res =
        luffy_objective(group, params, config.clip, shaping);
    stats.objective_value += res.value;
    for (int d = 0; d < params.feature_dim; ++d) grad_sum[d] += res.gradient[d];
    stats.groups.push_back(std::move(group));
  }

  const double inv_groups =
      stats.groups.empty() ? 0.0
                           : 1.0 / static_cast<double>(stats.groups.size());
  stats.objective_value *= inv_groups;
  for (double& g : grad_sum) g *= inv_groups;
  params = rl::sgd_step(params, grad_sum, config.train.learning_rate);

  stats.mean_reward = reward_count > 0.0 ? reward_sum / reward_count : 0.0;
  stats.mean_entropy =
      entropy_steps > 0.0 ? entropy_sum / entropy_steps : 0.0;
  return stats;
}

SftRunResult run_sft(const policy::PolicyParams& params,
                     std::span<const expert::ConvertedTrace> converted,
                     int epochs, double lr) {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  SftRunResult result;
  result.params = params;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rl::SftResult sft = rl::sft_loss(result.params, converted);
    result.epoch_losses.push_back(sft.loss);
    result.skipped_steps = sft.skipped_steps;
    // descent on the loss
    for (double& g : sft.gradient) g = -g;
    result.params = rl::sgd_step(result.params, sft.gradient, lr);
  }
  return result;
}

}  // namespace bepa::baselines
