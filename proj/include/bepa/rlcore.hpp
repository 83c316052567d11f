#pragma once

#include <span>
#include <string>
#include <vector>

#include "bepa/expert.hpp"
#include "bepa/trajectory.hpp"

namespace bepa::rl {

struct ClipConfig {
  double eps_low = 0.2;    // lower clip bound is 1 - eps_low
  double eps_high = 0.3;   // upper clip bound is 1 + eps_high
  double adv_epsilon = 1e-6;

  void validate() const;
};

struct TrainingConfig {
  int group_size = 8;
  double learning_rate = 0.05;
  int iterations = 300;
  int batch_tasks = 16;
  double temperature = 1.0;
  double kl_coefficient = 0.0;  // no KL term, kept to make the choice explicit

  void validate() const;
};

// N trajectories for one task. Old log-probs live on the trajectory steps:
// recorded at sampling time for on-policy slots, at cache-write time for
// injected slots.
struct RolloutGroup {
  std::string task_id;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<SlotProvenance> provenance;

  void validate() const;
};

struct AdvantageSet {
  std::vector<double> values;
};

struct ObjectiveResult {
  double value = 0.0;
  std::vector<double> gradient;
};

// Per-token instrumentation, mainly for diagnostics and bound checks.
struct TokenStat {
  double ratio = 0.0;          // importance ratio r_t
  double clipped_ratio = 0.0;  // r_t clamped to [1-eps_low, 1+eps_high]
  bool clipped_branch = false; // min selected the clipped side
  double advantage = 0.0;
};

// Group-relative advantages: (r_i - mean) / (population std + epsilon).
// Population statistics make the lone-success magnitudes come out as
// sqrt(N-1) and -1/sqrt(N-1) exactly.
AdvantageSet compute_advantages(std::span<const double> rewards,
                                double adv_epsilon);

double importance_ratio(double new_logprob, double old_logprob);

// min(r*A, clip(r; 1-eps_low, 1+eps_high)*A)
double clipped_term(double r, double advantage, const ClipConfig& clip);

// Length-normalized clipped surrogate over a (possibly mixed) group and its
// exact gradient. Tokens where the min selects the clipped branch outside
// the band contribute value but no gradient.
ObjectiveResult bepa_objective(const RolloutGroup& group,
                               const policy::PolicyParams& params,
                               const ClipConfig& clip,
                               std::vector<TokenStat>* stats = nullptr);

// theta' = theta + lr * gradient (ascent). Rejects non-finite gradients.
policy::PolicyParams sgd_step(const policy::PolicyParams& params,
                              std::span<const double> gradient, double lr);

struct SftResult {
  double loss = 0.0;                  // mean negative log-prob per step
  std::vector<double> gradient;      // gradient of the loss
  int scored_steps = 0;
  int skipped_steps = 0;             // unscorable steps, excluded and counted
};

SftResult sft_loss(const policy::PolicyParams& params,
                   std::span<const expert::ConvertedTrace> converted);

// Surrogate plus lambda times the negative SFT loss, gradients combined.
ObjectiveResult rl_plus_sft_objective(
    const RolloutGroup& group, const policy::PolicyParams& params,
    const ClipConfig& clip,
    std::span<const expert::ConvertedTrace> converted_for_batch,
    double lambda);

}  // namespace bepa::rl
