#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bepa/rollout.hpp"

namespace bepa::diag {

struct Histogram {
  std::vector<double> edges;   // B+1 ascending edges over [0,1]
  std::vector<double> masses;  // B non-negative masses summing to 1
  int count = 0;
};

// Equal-width bins over [0,1]; the final bin is right-closed so p = 1 is
// counted.
Histogram token_prob_histogram(std::span<const double> probs, int bins);

// Fraction of probabilities strictly below the threshold.
double tail_mass(std::span<const double> probs, double threshold = 0.2);

// Jensen-Shannon divergence in bits (base-2 logs), so the value lies in
// [0,1]. Requires identical bin edges.
double js_divergence(const Histogram& p, const Histogram& q);

// ---------------------------------------------------------------------------
// Data splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> held_out_ids;
  std::vector<std::string> expert_only_ids;
  std::vector<std::string> update_triggered_ids;  // filled during training
};

struct SplitInputs {
  std::set<std::string> expert_solved;    // tasks the scripted expert solves
  std::set<std::string> self_rolled;      // tasks with a verified self-roll
  double train_fraction = 0.8;
  int extra_train = 0;  // unsolvable tasks promoted into the training set
  int pass_rollouts = 5;
  rollout::EpisodeConfig episode;
};

// Pass@k per task under the base policy, then: solvable pool = expert
// successes union pass@k successes; train = a train_fraction sample of the
// pool plus the configured extras; held-out = the rest; expert-only = the
// self-rolled tasks the base policy cannot pass.
SplitSpec build_splits(const env::ScreenGraph& graph,
                       std::span<const env::TaskSpec> tasks,
                       const policy::PolicyParams& base_params,
                       const SplitInputs& inputs, std::uint64_t master_seed);

// Pass@k evaluation of one task: success when any of the sampled rollouts
// verifies.
bool pass_at_k(const env::ScreenGraph& graph, const env::TaskSpec& task,
               const policy::PolicyParams& params, int k,
               std::uint64_t master_seed,
               const rollout::EpisodeConfig& episode);

void save_splits(const std::string& path, const SplitSpec& splits);
SplitSpec load_splits(const std::string& path);

// ---------------------------------------------------------------------------
// Training trackers
// ---------------------------------------------------------------------------

// Append-only per-iteration series used for the training-dynamics views:
// entropy, success log-probs by provenance, and a sliding-window cache
// update frequency (updates per cached task seen).
class TrainingTrackers {
 public:
  explicit TrainingTrackers(int window = 20) : window_(window) {}

  void record_entropy(double value) { entropy_.push_back(value); }
  void record_success_logprob(double onpolicy, double cached) {
    succ_logprob_onpolicy_.push_back(onpolicy);
    succ_logprob_cached_.push_back(cached);
  }
  void record_cache_update_frequency(int updates, int tasks_with_cache);

  const std::vector<double>& entropy() const { return entropy_; }
  const std::vector<double>& success_logprob_onpolicy() const {
    return succ_logprob_onpolicy_;
  }
  const std::vector<double>& success_logprob_cached() const {
    return succ_logprob_cached_;
  }
  const std::vector<double>& update_frequency() const {
    return update_frequency_;
  }

 private:
  int window_;
  std::vector<double> entropy_;
  std::vector<double> succ_logprob_onpolicy_;
  std::vector<double> succ_logprob_cached_;
  std::vector<std::pair<int, int>> update_events_;  // (updates, cached seen)
  std::vector<double> update_frequency_;
};

}  // namespace bepa::diag
