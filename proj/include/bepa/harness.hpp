#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bepa/baselines.hpp"
#include "bepa/diagnostics.hpp"

namespace bepa::harness {

enum class Method {
  Bepa,
  Grpo,
  TraceReplacement,
  Luffy,
  Sft,
  SftThenRl,
  RlPlusSft,
  Level1Only,
  Level2Only,
};

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  Method method = Method::Bepa;
  std::string graph_file;
  std::string tasks_file;
  std::string out_dir;
  std::uint64_t master_seed = 1;

  rl::TrainingConfig train;
  rl::ClipConfig clip;
  baselines::ShapingConfig shaping;
  assim::UpdateRule update_rule = assim::UpdateRule::Random;

  int attempts_per_task = 5;     // LEVEL-1 episodes per expert trace
  int feature_dim = 4096;
  int history_k = 3;
  double plan_prior = 4.0;       // base-policy guidance-following strength
  double dismiss_prior = 4.0;    // base-policy popup-dismiss strength

  double train_fraction = 0.8;
  int extra_train = 0;
  int pass_rollouts = 5;

  int eval_every = 50;
  int eval_seeds = 3;
  int eval_rollouts_per_task = 1;
  int parallelism = 1;
  int cache_snapshot_every = 50;

  int sft_epochs = 3;
  double sft_lr = 0.05;
  double sft_lambda = 1.0;

  int hist_bins = 20;
  int update_window = 20;
  double tail_threshold = 0.2;

  // test-only hook, not a config key
  rollout::FaultInjector fault;

  void validate() const;
};

// key = value lines; '#' starts a comment.
std::map<std::string, std::string> parse_config_file(const std::string& path);
ExperimentConfig config_from_map(
    const std::map<std::string, std::string>& kv);
void write_config(const std::string& path, const ExperimentConfig& config);

struct EvalResult {
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;  // sample std across seeds
};

// Greedy (argmax) evaluation: per seed, one success flag per task, success
// rate over tasks; mean and sample std across seeds.
EvalResult evaluate(const env::ScreenGraph& graph,
                    const std::vector<env::TaskSpec>& tasks,
                    const policy::PolicyParams& params, int seeds,
                    int rollouts_per_task, std::uint64_t master_seed,
                    const rollout::EpisodeConfig& episode);

struct RunResult {
  diag::SplitSpec splits;
  double seed_success_rate = 0.0;
  EvalResult final_train;
  EvalResult final_held_out;
  EvalResult final_expert_only;
  int total_updates = 0;
  int total_replacements = 0;
  // expert-only tasks seeded LEVEL1 that saw an on-policy success, and how
  // many of those ended LEVEL2
  int flip_denominator = 0;
  int flip_numerator = 0;
  // pooled JSD between the cache and the on-policy reference on the
  // update-triggered subset, at seed time and at the end; -1 when undefined
  double jsd_seed = -1.0;
  double jsd_end = -1.0;
  std::string out_dir;
};

// Full seeded run: suite load, expert sweep, conversion, LEVEL-1 seeding,
// split construction, K training iterations of the selected method with
// periodic evaluation, and all artifacts written under out_dir.
RunResult run_experiment(const ExperimentConfig& config);

// Trace records: (iteration, trajectory) JSONL.
struct TraceRecord {
  int iteration = 0;
  Trajectory trajectory;
};

void write_traces(const std::string& path,
                  const std::vector<TraceRecord>& records);
std::vector<TraceRecord> load_traces(const std::string& path);

struct ReplayReport {
  int traces = 0;
  int scored_steps = 0;
  int skipped_slots = 0;  // non on-policy slots, not re-scorable this way
  double max_logprob_error = 0.0;
  int env_mismatches = 0;
};

// Re-scores on-policy trace records under a params snapshot and re-runs
// their episodes from the recorded env seeds, checking that log-probs and
// observations reproduce.
ReplayReport replay_traces(const std::vector<TraceRecord>& records,
                           const policy::PolicyParams& params,
                           const env::ScreenGraph& graph,
                           const std::map<std::string, env::TaskSpec>& tasks);

}  // namespace bepa::harness
