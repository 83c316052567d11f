#include "bepa/rlcore.hpp"

#include <algorithm>
#include <cmath>

#include "bepa/errors.hpp"

namespace bepa::rl {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0)) {
    throw ConfigError("eps_low must be in (0,1)");
  }
  if (!(eps_high > 0.0)) throw ConfigError("eps_high must be positive");
  if (!(adv_epsilon > 0.0)) throw ConfigError("adv_epsilon must be positive");
}

void TrainingConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_tasks < 1) throw ConfigError("batch_tasks must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (kl_coefficient != 0.0) {
    throw ConfigError("kl_coefficient is fixed to 0 in this trainer");
  }
}

void RolloutGroup::validate() const {
  const std::size_t n = trajectories.size();
  if (n < 2) throw ContractError("group needs at least 2 trajectories");
  if (rewards.size() != n || provenance.size() != n) {
    throw ContractError("group arrays out of sync");
  }
  int cached = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (provenance[i] == SlotProvenance::Cached) ++cached;
    if (rewards[i] != 0.0 && rewards[i] != 1.0) {
      throw ContractError("rewards must be binary");
    }
  }
  if (cached > 1) throw ContractError("at most one cached slot per group");
}

AdvantageSet compute_advantages(std::span<const double> rewards,
                                double adv_epsilon) {
  const std::size_t n = rewards.size();
  if (n < 2) throw ContractError("compute_advantages needs >= 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);  // population variance
  const double denom = std::sqrt(var) + adv_epsilon;

  AdvantageSet adv;
  adv.values.reserve(n);
  for (double r : rewards) adv.values.push_back((r - mean) / denom);
  return adv;
}

double importance_ratio(double new_logprob, double old_logprob) {
  if (!std::isfinite(new_logprob) || !std::isfinite(old_logprob)) {
    throw NumericError("non-finite log-probability in importance ratio");
  }
  return std::exp(new_logprob - old_logprob);
}

double clipped_term(double r, double advantage, const ClipConfig& clip) {
  const double clamped =
      std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
  return std::min(r * advantage, clamped * advantage);
}

ObjectiveResult bepa_objective(const RolloutGroup& group,
                               const policy::PolicyParams& params,
                               const ClipConfig& clip,
                               std::vector<TokenStat>* stats) {
  group.validate();
  ObjectiveResult result;
  result.gradient.assign(params.feature_dim, 0.0);

  std::size_t total_steps = 0;
  for (const auto& traj : group.trajectories) total_steps += traj.steps.size();
  if (total_steps == 0) return result;
  const double inv_z = 1.0 / static_cast<double>(total_steps);

  AdvantageSet adv = compute_advantages(group.rewards, clip.adv_epsilon);

  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    if (group.provenance[i] == SlotProvenance::OffPolicyExpert) {
      throw ContractError(
          "off-policy expert slots are not clip-scored; use the shaped "
          "objective");
    }
    const double a = adv.values[i];
    for (const auto& step : group.trajectories[i].steps) {
      if (!std::isfinite(step.logprob)) {
        throw ContractError("step without a finite old log-prob in group '" +
                            group.task_id + "'");
      }
      const double new_lp = policy::logprob(params, step.ctx, step.action);
      const double r = importance_ratio(new_lp, step.logprob);
      const double clamped =
          std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
      const double unclipped = r * a;
      const double clipped = clamped * a;

      result.value += inv_z * std::min(unclipped, clipped);
      const bool clip_active = clipped < unclipped;
      if (!clip_active) {
        // d/dtheta (r*A) = r*A * grad_logprob
        const policy::FeatureVector g =
            policy::grad_logprob(params, step.ctx, step.action);
        const double w = inv_z * r * a;
        for (const auto& [idx, val] : g.entries) {
          result.gradient[idx] += w * val;
        }
      }
      if (stats) {
        stats->push_back({r, clamped, clip_active, a});
      }
    }
  }
  return result;
}

policy::PolicyParams sgd_step(const policy::PolicyParams& params,
                              std::span<const double> gradient, double lr) {
  if (gradient.size() != params.theta.size()) {
    throw ContractError("gradient dimension mismatch");
  }
  for (double g : gradient) {
    if (!std::isfinite(g)) {
      throw NumericError("non-finite gradient entry; step rejected");
    }
  }
  policy::PolicyParams next = params;
  for (std::size_t i = 0; i < next.theta.size(); ++i) {
    next.theta[i] += lr * gradient[i];
  }
  return next;
}

SftResult sft_loss(const policy::PolicyParams& params,
                   std::span<const expert::ConvertedTrace> converted) {
  SftResult result;
  result.gradient.assign(params.feature_dim, 0.0);
  for (const auto& trace : converted) {
    for (const auto& step : trace.steps) {
      try {
        const double lp = policy::logprob(params, step.ctx, step.action);
        const policy::FeatureVector g =
            policy::grad_logprob(params, step.ctx, step.action);
        result.loss += -lp;
        for (const auto& [idx, val] : g.entries) {
          result.gradient[idx] += -val;
        }
        ++result.scored_steps;
      } catch (const ScoringError&) {
        ++result.skipped_steps;
      }
    }
  }
  if (result.scored_steps > 0) {
    const double inv = 1.0 / static_cast<double>(result.scored_steps);
    result.loss *= inv;
    for (double& g : result.gradient) g *= inv;
  }
  return result;
}

ObjectiveResult rl_plus_sft_objective(
    const RolloutGroup& group, const policy::PolicyParams& params,
    const ClipConfig& clip,
    std::span<const expert::ConvertedTrace> converted_for_batch,
    double lambda) {
  ObjectiveResult rl = bepa_objective(group, params, clip);
  if (lambda == 0.0) return rl;
  SftResult sft = sft_loss(params, converted_for_batch);
  rl.value -= lambda * sft.loss;
  for (std::size_t i = 0; i < rl.gradient.size(); ++i) {
    rl.gradient[i] -= lambda * sft.gradient[i];
  }
  return rl;
}

}  // namespace bepa::rl
