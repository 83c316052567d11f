#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "bepa/assim.hpp"

namespace bepa::baselines {

struct ShapingConfig {
  double gamma = 0.1;

  void validate() const;
};

// Off-policy weight shaping f(w) = w / (w + gamma): monotone, in [0,1).
double luffy_shape(double w, double gamma);

// Mixed group: the off-policy trace (when present) takes slot 0 with its
// build-time verified reward, the remaining slots are on-policy. Without a
// trace the group is purely on-policy.
rl::RolloutGroup luffy_build_group(const std::string& task_id,
                                   std::vector<Trajectory> onpolicy,
                                   const Trajectory* offpolicy);

// Clipped surrogate on the on-policy slots; the off-policy slot uses a
// constant-one denominator and the shaped weight f(pi_theta(a_t)) instead
// of clipping.
rl::ObjectiveResult luffy_objective(const rl::RolloutGroup& group,
                                    const policy::PolicyParams& params,
                                    const rl::ClipConfig& clip,
                                    const ShapingConfig& shaping,
                                    std::vector<rl::TokenStat>* stats =
                                        nullptr);

struct LuffyIterationStats {
  int offpolicy_slots = 0;
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double objective_value = 0.0;
  std::vector<rl::RolloutGroup> groups;
};

// One LUFFY training step: collect N-1 on-policy rollouts per task with an
// off-policy trace (N without), build mixed groups, ascend the shaped
// objective.
LuffyIterationStats luffy_iteration(
    const env::ScreenGraph& graph, std::span<const env::TaskSpec> batch,
    policy::PolicyParams& params,
    const std::map<std::string, Trajectory>& offpolicy,
    const assim::IterationConfig& config, const ShapingConfig& shaping,
    int iteration);

struct SftRunResult {
  policy::PolicyParams params;
  std::vector<double> epoch_losses;  // loss at each epoch start
  int skipped_steps = 0;
};

// Full-batch gradient descent on the cross-entropy loss over converted
// traces, one step per epoch.
SftRunResult run_sft(const policy::PolicyParams& params,
                     std::span<const expert::ConvertedTrace> converted,
                     int epochs, double lr);

}  // namespace bepa::baselines
