#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bepa/rollout.hpp"

namespace bepa::assim {

enum class CacheProvenance { Level1, Level2 };

const char* cache_provenance_name(CacheProvenance p);
CacheProvenance parse_cache_provenance(const std::string& name);

// One verified successful trajectory per task. `trajectory` keeps the
// generation-time contexts and log-probs; `injection` is the view spliced
// into failed groups: plan-free contexts with log-probs re-scored at write
// time, matching the conditioning of on-policy rollouts.
struct CacheEntry {
  Trajectory trajectory;
  Trajectory injection;
  CacheProvenance provenance = CacheProvenance::Level1;
  int iteration_written = 0;
  int update_count = 0;
  // set when some step could not be scored plan-free and kept its
  // generation-time log-prob instead
  bool plan_fallback = false;
};

struct GuidanceCache {
  std::map<std::string, CacheEntry> entries;

  bool has(const std::string& task_id) const {
    return entries.count(task_id) != 0;
  }
  std::size_t size() const { return entries.size(); }
};

enum class UpdateRule { Random, HighestLogProb, ShortestStep };

const char* update_rule_name(UpdateRule r);
UpdateRule parse_update_rule(const std::string& name);

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

struct SelfRollResult {
  // verified plan-conditioned successes, one per task
  std::map<std::string, CacheEntry> seeds;
  int expert_tasks = 0;
  int seeded_tasks = 0;
  double seed_success_rate = 0.0;
};

// Rolls the policy with plan-conditioned contexts, up to attempts_per_task
// episodes per expert trace, keeping the first verified success. Each kept
// trajectory also gets a plan-free re-scored injection view.
SelfRollResult level1_selfroll(
    const env::ScreenGraph& graph,
    const std::map<std::string, env::TaskSpec>& tasks,
    std::span<const expert::ExpertTrace> expert_set,
    const policy::PolicyParams& params, int attempts_per_task,
    std::uint64_t master_seed, const rollout::EpisodeConfig& episode);

GuidanceCache init_cache(const SelfRollResult& self_rolled);

// Seeds every entry from converted expert traces scored under the given
// params; used by the static-replacement style baselines.
GuidanceCache init_cache_from_converted(
    const env::ScreenGraph& graph,
    const std::map<std::string, env::TaskSpec>& tasks,
    std::span<const expert::ConvertedTrace> converted,
    const policy::PolicyParams& params);

// ---------------------------------------------------------------------------
// Dynamic updates and trace replacement
// ---------------------------------------------------------------------------

// Picks the trajectory a refresh keeps: Random draws uniformly,
// HighestLogProb takes the best mean per-step log-prob under the current
// params, ShortestStep the fewest steps. Ties go to the lowest index.
std::size_t select_update(std::span<const Trajectory> successes,
                          UpdateRule rule,
                          const policy::PolicyParams& params, Rng& rng);

// Replaces (or creates) the task's entry with a verified trajectory,
// stamping provenance Level2 and bumping the update count.
void apply_cache_update(GuidanceCache& cache, const std::string& task_id,
                        const Trajectory& trajectory, int iteration);

// If every reward in the fully on-policy group is 0 and the cache holds the
// task, slot 0 becomes the cached injection trajectory with reward 1.
// Returns whether a replacement happened.
bool replace_on_failure(rl::RolloutGroup& group, const GuidanceCache& cache,
                        const std::string& task_id);

// ---------------------------------------------------------------------------
// One training iteration
// ---------------------------------------------------------------------------

struct IterationConfig {
  rl::TrainingConfig train;
  rl::ClipConfig clip;
  UpdateRule rule = UpdateRule::Random;
  bool dynamic_updates = true;   // off: static cache (replacement baselines)
  bool injection = true;         // off: cache never enters groups
  int parallelism = 1;
  std::uint64_t master_seed = 0;
  int history_k = 3;
  // optional joint SFT term, restricted to converted traces of batch tasks
  const std::map<std::string, expert::ConvertedTrace>* sft_traces = nullptr;
  double sft_lambda = 0.0;
  rollout::FaultInjector fault;
};

struct IterationStats {
  int replacements = 0;
  int cache_updates = 0;
  int tasks_with_cache = 0;
  int onpolicy_successes = 0;
  double mean_reward = 0.0;        // on-policy rewards before replacement
  double mean_entropy = 0.0;
  double succ_logprob_onpolicy = 0.0;  // 0 when no on-policy success
  double succ_logprob_cached = 0.0;    // 0 when nothing was injected
  double objective_value = 0.0;
  std::vector<std::string> updated_tasks;
  std::vector<std::string> replaced_tasks;
  std::vector<std::string> succeeded_tasks;
  std::vector<rl::RolloutGroup> groups;  // finalized groups, task order
};

// Snapshot the behavior policy, collect N rollouts per task, refresh the
// cache on success or inject on total failure, then take one ascent step on
// the clipped surrogate averaged over groups.
IterationStats bepa_iteration(const env::ScreenGraph& graph,
                              std::span<const env::TaskSpec> batch,
                              policy::PolicyParams& params,
                              GuidanceCache& cache,
                              const IterationConfig& config, int iteration);

// Cache snapshot file: one line-delimited entry per task.
void save_cache(const std::string& path, const GuidanceCache& cache);
GuidanceCache load_cache(const std::string& path);

}  // namespace bepa::assim
