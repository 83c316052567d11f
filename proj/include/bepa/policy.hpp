#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bepa/env.hpp"
#include "bepa/rng.hpp"

namespace bepa::policy {

using env::ActionToken;
using env::Observation;

// Dense parameter vector of the linear-softmax action policy. Immutable
// snapshot for readers; the trainer produces new snapshots.
struct PolicyParams {
  std::vector<double> theta;
  int feature_dim = 0;
  std::vector<ActionToken> vocab;
};

// Conditioning for one decision: the observation, the task, a short window
// of recent actions (most recent first) and the remaining plan subgoals
// when guidance is attached.
struct Context {
  Observation obs;
  std::string task_id;
  std::vector<ActionToken> history;
  std::vector<std::string> plan;

  bool operator==(const Context& o) const = default;
};

// Sparse feature vector over [0, feature_dim): sorted (index, value) pairs.
struct FeatureVector {
  std::vector<std::pair<int, double>> entries;

  double dot(const std::vector<double>& theta) const;
  double norm2() const;
};

struct ActionDist {
  std::vector<ActionToken> actions;
  std::vector<double> probs;
  std::vector<double> logprobs;
};

// Global action vocabulary for a graph: one click token per distinct widget
// label, one setkey token per declared (key, value) pair, plus dismiss and
// finish, in a fixed order.
std::vector<ActionToken> build_vocab(const env::ScreenGraph& graph);

// Actions available in a context: clicks on visible widgets, setkeys for the
// screen's settable pairs, then dismiss and finish (always available).
std::vector<ActionToken> legal_actions(const Observation& obs);

// Hashed features of a (context, action) pair. Atoms: screen id, popup
// flag, each history slot, each plan token, and the action identity, each
// paired with the action and hashed into dim buckets with weight +1.
FeatureVector features(const Context& ctx, const ActionToken& action,
                       int dim);

ActionDist action_dist(const PolicyParams& params, const Context& ctx,
                       double temperature = 1.0);

// Softmax over explicit candidates; exposed for scoring paths and tests.
ActionDist action_dist_over(const PolicyParams& params, const Context& ctx,
                            const std::vector<ActionToken>& actions,
                            double temperature = 1.0);

std::pair<ActionToken, double> sample_action(const PolicyParams& params,
                                             const Context& ctx, Rng& rng,
                                             double temperature = 1.0);

// Argmax action (ties broken by lowest index) and its log-probability.
std::pair<ActionToken, double> greedy_action(const PolicyParams& params,
                                             const Context& ctx);

double logprob(const PolicyParams& params, const Context& ctx,
               const ActionToken& action);

// Score function of the softmax: features(ctx, a) minus the
// probability-weighted feature mean over legal actions.
FeatureVector grad_logprob(const PolicyParams& params, const Context& ctx,
                           const ActionToken& action);

// Shannon entropy of the action distribution, in nats.
double entropy(const PolicyParams& params, const Context& ctx);

PolicyParams make_zero_params(const env::ScreenGraph& graph, int dim);

// Base policy construction: zero weights plus a guidance-following prior.
// The prior pairs each plan subgoal with the single action that realizes it
// (goto -> the click whose widget leads there, set -> the matching setkey,
// finish -> finish) on the current-subgoal slot, and favors dismiss while a
// popup is active. Without a plan in the context the policy stays near
// uniform, which is what makes held-out exploration hard and guided
// execution easy.
PolicyParams make_base_params(const env::ScreenGraph& graph, int dim,
                              double plan_strength, double dismiss_strength);

// Versioned text snapshot; values are hex floats so round-trips are
// bit-exact.
void save_params(const std::string& path, const PolicyParams& params);
PolicyParams load_params(const std::string& path,
                         const env::ScreenGraph& graph);

}  // namespace bepa::policy
