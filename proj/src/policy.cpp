#include "bepa/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "bepa/errors.hpp"

namespace bepa::policy {

double FeatureVector::dot(const std::vector<double>& theta) const {
  double acc = 0.0;
  for (const auto& [idx, val] : entries) acc += theta[idx] * val;
  return acc;
}

double FeatureVector::norm2() const {
  double acc = 0.0;
  for (const auto& [idx, val] : entries) acc += val * val;
  return std::sqrt(acc);
}

std::vector<ActionToken> build_vocab(const env::ScreenGraph& graph) {
  std::set<std::string> labels;
  for (const auto& [_, screen] : graph.screens) {
    for (const auto& w : screen.widgets) labels.insert(w);
  }
  std::vector<ActionToken> vocab;
  for (const auto& w : labels) vocab.push_back(ActionToken::click(w));
  for (const auto& [k, values] : graph.key_values) {
    for (const auto& v : values) vocab.push_back(ActionToken::setkey(k, v));
  }
  vocab.push_back(ActionToken::dismiss());
  vocab.push_back(ActionToken::finish());
  return vocab;
}

std::vector<ActionToken> legal_actions(const Observation& obs) {
  std::vector<ActionToken> actions;
  for (const auto& w : obs.widgets) actions.push_back(ActionToken::click(w));
  for (const auto& [k, v] : obs.settable) {
    actions.push_back(ActionToken::setkey(k, v));
  }
  actions.push_back(ActionToken::dismiss());
  actions.push_back(ActionToken::finish());
  return actions;
}

namespace {

int bucket(const std::string& atom, int dim) {
  return static_cast<int>(fnv1a(atom) % static_cast<std::uint64_t>(dim));
}

void add_atom(std::map<int, double>& acc, const std::string& atom, int dim,
              double value = 1.0) {
  acc[bucket(atom, dim)] += value;
}

}  // namespace

FeatureVector features(const Context& ctx, const ActionToken& action,
                       int dim) {
  const std::string akey = action.key();
  std::map<int, double> acc;
  add_atom(acc, "S|" + std::to_string(ctx.obs.screen_id) + "|" + akey, dim);
  add_atom(acc, std::string("P|") + (ctx.obs.popup_active ? "1" : "0") + "|" +
                    akey,
           dim);
  for (std::size_t i = 0; i < ctx.history.size(); ++i) {
    add_atom(acc,
             "H|" + std::to_string(i) + "|" + ctx.history[i].key() + "|" +
                 akey,
             dim);
  }
  for (std::size_t j = 0; j < ctx.plan.size(); ++j) {
    add_atom(acc, "L|" + std::to_string(j) + "|" + ctx.plan[j] + "|" + akey,
             dim);
  }
  add_atom(acc, "A|" + akey, dim);

  FeatureVector fv;
  fv.entries.assign(acc.begin(), acc.end());
  return fv;
}

ActionDist action_dist_over(const PolicyParams& params, const Context& ctx,
                            const std::vector<ActionToken>& actions,
                            double temperature) {
  if (actions.empty()) throw EnvError("no legal actions in context");
  if (temperature <= 0.0) throw UsageError("temperature must be positive");

  ActionDist dist;
  dist.actions = actions;
  std::vector<double> logits(actions.size());
  double max_logit = -1e300;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    logits[i] =
        features(ctx, actions[i], params.feature_dim).dot(params.theta) /
        temperature;
    max_logit = std::max(max_logit, logits[i]);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - max_logit);
  const double log_z = std::log(z) + max_logit;

  dist.probs.resize(actions.size());
  dist.logprobs.resize(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    dist.logprobs[i] = logits[i] - log_z;
    dist.probs[i] = std::exp(dist.logprobs[i]);
  }
  return dist;
}

ActionDist action_dist(const PolicyParams& params, const Context& ctx,
                       double temperature) {
  return action_dist_over(params, ctx, legal_actions(ctx.obs), temperature);
}

std::pair<ActionToken, double> sample_action(const PolicyParams& params,
                                             const Context& ctx, Rng& rng,
                                             double temperature) {
  ActionDist dist = action_dist(params, ctx, temperature);
  int idx = rng.categorical(dist.probs);
  return {dist.actions[idx], dist.logprobs[idx]};
}

std::pair<ActionToken, double> greedy_action(const PolicyParams& params,
                                             const Context& ctx) {
  ActionDist dist = action_dist(params, ctx);
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.actions.size(); ++i) {
    if (dist.probs[i] > dist.probs[best]) best = i;
  }
  return {dist.actions[best], dist.logprobs[best]};
}

double logprob(const PolicyParams& params, const Context& ctx,
               const ActionToken& action) {
  ActionDist dist = action_dist(params, ctx);
  for (std::size_t i = 0; i < dist.actions.size(); ++i) {
    if (dist.actions[i] == action) return dist.logprobs[i];
  }
  throw ScoringError("action '" + action.key() +
                     "' is not legal in its context (screen " +
                     std::to_string(ctx.obs.screen_id) + ")");
}

FeatureVector grad_logprob(const PolicyParams& params, const Context& ctx,
                           const ActionToken& action) {
  ActionDist dist = action_dist(params, ctx);
  int taken = -1;
  for (std::size_t i = 0; i < dist.actions.size(); ++i) {
    if (dist.actions[i] == action) taken = static_cast<int>(i);
  }
  if (taken < 0) {
    throw ScoringError("action '" + action.key() +
                       "' is not legal in its context");
  }

  std::map<int, double> acc;
  const FeatureVector fa = features(ctx, action, params.feature_dim);
  for (const auto& [idx, val] : fa.entries) acc[idx] += val;
  for (std::size_t i = 0; i < dist.actions.size(); ++i) {
    const FeatureVector fi =
        features(ctx, dist.actions[i], params.feature_dim);
    for (const auto& [idx, val] : fi.entries) {
      acc[idx] -= dist.probs[i] * val;
    }
  }

  FeatureVector grad;
  for (const auto& [idx, val] : acc) {
    if (val != 0.0) grad.entries.emplace_back(idx, val);
  }
  return grad;
}

double entropy(const PolicyParams& params, const Context& ctx) {
  ActionDist dist = action_dist(params, ctx);
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

PolicyParams make_zero_params(const env::ScreenGraph& graph, int dim) {
  if (dim < 1) throw ConfigError("feature_dim must be >= 1");
  PolicyParams params;
  params.feature_dim = dim;
  params.theta.assign(dim, 0.0);
  params.vocab = build_vocab(graph);
  return params;
}

PolicyParams make_base_params(const env::ScreenGraph& graph, int dim,
                              double plan_strength, double dismiss_strength) {
  PolicyParams params = make_zero_params(graph, dim);
  // one prior atom per distinct (subgoal, realizing action) pair
  std::set<std::string> atoms;
  for (const auto& [_, screen] : graph.screens) {
    for (const auto& [w, target] : screen.transitions) {
      atoms.insert("L|0|goto:" + std::to_string(target) + "|" +
                   ActionToken::click(w).key());
    }
  }
  for (const auto& [k, values] : graph.key_values) {
    for (const auto& v : values) {
      atoms.insert("L|0|set:" + k + "=" + v + "|" +
                   ActionToken::setkey(k, v).key());
    }
  }
  atoms.insert("L|0|finish|finish");
  for (const auto& atom : atoms) {
    params.theta[bucket(atom, dim)] += plan_strength;
  }
  params.theta[bucket("P|1|dismiss", dim)] += dismiss_strength;
  return params;
}

void save_params(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "policy-params v1\n";
  out << "dim " << params.feature_dim << "\n";
  char buf[64];
  for (double v : params.theta) {
    std::snprintf(buf, sizeof(buf), "%a", v);
    out << buf << "\n";
  }
}

PolicyParams load_params(const std::string& path,
                         const env::ScreenGraph& graph) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (header != "policy-params v1") {
    throw IoError(path + ": unsupported params header '" + header + "'");
  }
  std::string dim_label;
  int dim = 0;
  in >> dim_label >> dim;
  if (dim_label != "dim" || dim < 1) {
    throw IoError(path + ": malformed dim line");
  }
  PolicyParams params = make_zero_params(graph, dim);
  for (int i = 0; i < dim; ++i) {
    std::string token;
    if (!(in >> token)) {
      throw IoError(path + ": truncated at value " + std::to_string(i));
    }
    params.theta[i] = std::strtod(token.c_str(), nullptr);
  }
  return params;
}

}  // namespace bepa::policy
