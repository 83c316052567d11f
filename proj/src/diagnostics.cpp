#include "bepa/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "bepa/errors.hpp"

namespace bepa::diag {

using json = nlohmann::json;

Histogram token_prob_histogram(std::span<const double> probs, int bins) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
  if (probs.empty()) throw ContractError("histogram over an empty sample");

  Histogram hist;
  hist.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) {
    hist.edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  }
  hist.masses.assign(bins, 0.0);
  for (double p : probs) {
    if (p < 0.0 || p > 1.0) {
      throw ContractError("probability outside [0,1] in histogram input");
    }
    int idx = std::min(bins - 1, static_cast<int>(p * bins));
    hist.masses[idx] += 1.0;
  }
  hist.count = static_cast<int>(probs.size());
  for (double& m : hist.masses) m /= static_cast<double>(hist.count);
  return hist;
}

double tail_mass(std::span<const double> probs, double threshold) {
  if (probs.empty()) throw ContractError("tail mass over an empty sample");
  int below = 0;
  for (double p : probs) {
    if (p < threshold) ++below;
  }
  return static_cast<double>(below) / static_cast<double>(probs.size());
}

double js_divergence(const Histogram& p, const Histogram& q) {
  if (p.edges != q.edges) {
    throw ContractError("JSD over histograms with different bin edges");
  }
  auto kl_to_mid = [](const std::vector<double>& a,
                      const std::vector<double>& b) {
    double kl = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] > 0.0) {
        const double m = 0.5 * (a[i] + b[i]);
        kl += a[i] * std::log2(a[i] / m);
      }
    }
    return kl;
  };
  return 0.5 * (kl_to_mid(p.masses, q.masses) +
                kl_to_mid(q.masses, p.masses));
}

bool pass_at_k(const env::ScreenGraph& graph, const env::TaskSpec& task,
               const policy::PolicyParams& params, int k,
               std::uint64_t master_seed,
               const rollout::EpisodeConfig& episode) {
  const std::uint64_t task_hash = fnv1a(task.task_id);
  for (int i = 0; i < k; ++i) {
    Trajectory traj = rollout::run_episode(
        graph, task, params,
        derive_seed(master_seed, "pass-env", task_hash,
                    static_cast<std::uint64_t>(i)),
        derive_seed(master_seed, "pass-act", task_hash,
                    static_cast<std::uint64_t>(i)),
        episode);
    if (traj.reward == 1.0) return true;
  }
  return false;
}

SplitSpec build_splits(const env::ScreenGraph& graph,
                       std::span<const env::TaskSpec> tasks,
                       const policy::PolicyParams& base_params,
                       const SplitInputs& inputs, std::uint64_t master_seed) {
  if (inputs.train_fraction <= 0.0 || inputs.train_fraction > 1.0) {
    throw ConfigError("train_fraction must be in (0,1]");
  }

  std::set<std::string> base_solves;
  for (const auto& task : tasks) {
    if (pass_at_k(graph, task, base_params, inputs.pass_rollouts, master_seed,
                  inputs.episode)) {
      base_solves.insert(task.task_id);
    }
  }

  std::vector<std::string> pool, outside;
  for (const auto& task : tasks) {
    if (inputs.expert_solved.count(task.task_id) ||
        base_solves.count(task.task_id)) {
      pool.push_back(task.task_id);
    } else {
      outside.push_back(task.task_id);
    }
  }
  if (pool.empty()) {
    throw ConfigError("solvable pool is empty; nothing to train on");
  }

  SplitSpec splits;
  Rng rng(derive_seed(master_seed, "splits"));
  // deterministic shuffle of the sorted pool
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::swap(pool[i - 1],
              pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
  }
  const std::size_t n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(inputs.train_fraction *
                                  static_cast<double>(pool.size())));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (i < n_train ? splits.train_ids : splits.held_out_ids).push_back(pool[i]);
  }
  int extras = inputs.extra_train;
  for (const auto& id : outside) {
    if (extras > 0) {
      splits.train_ids.push_back(id);
      --extras;
    } else {
      splits.held_out_ids.push_back(id);
    }
  }

  for (const auto& id : inputs.self_rolled) {
    if (!base_solves.count(id)) splits.expert_only_ids.push_back(id);
  }

  std::sort(splits.train_ids.begin(), splits.train_ids.end());
  std::sort(splits.held_out_ids.begin(), splits.held_out_ids.end());
  std::sort(splits.expert_only_ids.begin(), splits.expert_only_ids.end());
  return splits;
}

void save_splits(const std::string& path, const SplitSpec& splits) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  json j{{"train", splits.train_ids},
         {"held_out", splits.held_out_ids},
         {"expert_only", splits.expert_only_ids},
         {"update_triggered", splits.update_triggered_ids}};
  out << j.dump(2) << "\n";
}

SplitSpec load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  SplitSpec splits;
  j.at("train").get_to(splits.train_ids);
  j.at("held_out").get_to(splits.held_out_ids);
  j.at("expert_only").get_to(splits.expert_only_ids);
  j.at("update_triggered").get_to(splits.update_triggered_ids);
  return splits;
}

void TrainingTrackers::record_cache_update_frequency(int updates,
                                                     int tasks_with_cache) {
  update_events_.emplace_back(updates, tasks_with_cache);
  int first = std::max(0, static_cast<int>(update_events_.size()) - window_);
  int upd = 0, seen = 0;
  for (std::size_t i = first; i < update_events_.size(); ++i) {
    upd += update_events_[i].first;
    seen += update_events_[i].second;
  }
  update_frequency_.push_back(
      seen > 0 ? static_cast<double>(upd) / static_cast<double>(seen) : 0.0);
}

}  // namespace bepa::diag
