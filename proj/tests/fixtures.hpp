#pragma once

// Shared fixtures and independent oracles used across the test suites.

#include <cmath>
#include <functional>
#include <optional>

#include "bepa/assim.hpp"
#include "bepa/serde.hpp"

namespace fixtures {

using namespace bepa;

// Chain graph 0 -> 1 -> 2 -> 3 with a back-to-start widget on every corridor
// screen and one settable key on the goal screen.
inline env::ScreenGraph chain_graph() {
  env::ScreenGraph graph;
  for (int id = 0; id <= 3; ++id) {
    env::Screen s;
    s.id = id;
    if (id < 3) {
      s.widgets = {"nav_" + std::to_string(id + 1), "nav_0"};
      s.transitions["nav_" + std::to_string(id + 1)] = id + 1;
      s.transitions["nav_0"] = 0;
    }
    graph.screens[id] = std::move(s);
  }
  graph.key_values["color"] = {"red", "blue"};
  graph.screens[3].mutable_keys.insert("color");
  graph.validate();
  return graph;
}

inline env::TaskSpec chain_task(bool require_key, double popup_prob = 0.0,
                                std::uint64_t seed = 7) {
  env::TaskSpec task;
  task.task_id = "chain";
  task.start_screen = 0;
  task.goal.target_screen = 3;
  if (require_key) task.goal.required_keys["color"] = "blue";
  task.horizon = 15;
  task.popup_prob = popup_prob;
  task.seed = seed;
  return task;
}

inline std::string traj_digest(const Trajectory& traj) {
  nlohmann::json j = traj;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Central differences over every parameter dimension.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const policy::PolicyParams&)>& f,
    const policy::PolicyParams& params, double h = 1e-5) {
  std::vector<double> grad(params.theta.size(), 0.0);
  policy::PolicyParams probe = params;
  for (std::size_t i = 0; i < params.theta.size(); ++i) {
    probe.theta[i] = params.theta[i] + h;
    const double up = f(probe);
    probe.theta[i] = params.theta[i] - h;
    const double down = f(probe);
    probe.theta[i] = params.theta[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double grad_rel_error(const std::vector<double>& impl,
                             const std::vector<double>& fd) {
  double diff2 = 0.0, fd2 = 0.0;
  for (std::size_t i = 0; i < impl.size(); ++i) {
    diff2 += (impl[i] - fd[i]) * (impl[i] - fd[i]);
    fd2 += fd[i] * fd[i];
  }
  return std::sqrt(diff2) / std::max(std::sqrt(fd2), 1e-12);
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

struct RandomInstance {
  env::ScreenGraph graph;
  env::TaskSpec task;
  policy::PolicyParams theta_old;
  policy::PolicyParams theta;  // perturbed evaluation point
  rl::RolloutGroup group;
};

inline policy::PolicyParams perturbed(const policy::PolicyParams& base,
                                      Rng& rng, double scale) {
  policy::PolicyParams out = base;
  for (double& v : out.theta) v += (rng.uniform() * 2.0 - 1.0) * scale;
  return out;
}

// Random small graph, random params, and a rollout group sampled under
// theta_old with recorded old log-probs. Optionally marks slot 0 as a
// cached success to exercise mixed groups.
inline RandomInstance random_instance(Rng& rng, int dim, int n_slots,
                                      bool mixed_groups) {
  RandomInstance inst;
  const int n_screens = 3 + rng.uniform_int(3);
  for (int id = 0; id < n_screens; ++id) {
    env::Screen s;
    s.id = id;
    const int n_widgets = 1 + rng.uniform_int(2);
    for (int w = 0; w < n_widgets; ++w) {
      const int target = rng.uniform_int(n_screens);
      std::string label = "nav_" + std::to_string(target);
      if (!s.transitions.count(label)) {
        s.widgets.push_back(label);
        s.transitions[label] = target;
      }
    }
    inst.graph.screens[id] = std::move(s);
  }
  inst.graph.key_values["flag"] = {"on", "off"};
  inst.graph.screens[rng.uniform_int(n_screens)].mutable_keys.insert("flag");
  inst.graph.validate();

  inst.task.task_id = "rand";
  inst.task.start_screen = 0;
  inst.task.goal.target_screen = rng.uniform_int(n_screens);
  if (rng.bernoulli(0.3)) inst.task.goal.required_keys["flag"] = "on";
  inst.task.horizon = 4 + rng.uniform_int(4);
  inst.task.popup_prob = 0.2;
  inst.task.seed = rng.next_u64();

  inst.theta_old = policy::make_zero_params(inst.graph, dim);
  for (double& v : inst.theta_old.theta) {
    v = (rng.uniform() * 2.0 - 1.0) * 0.5;
  }

  rollout::EpisodeConfig episode;
  inst.group.task_id = inst.task.task_id;
  for (int slot = 0; slot < n_slots; ++slot) {
    Trajectory traj =
        rollout::run_episode(inst.graph, inst.task, inst.theta_old,
                             rng.next_u64(), rng.next_u64(), episode);
    inst.group.rewards.push_back(traj.reward);
    inst.group.provenance.push_back(SlotProvenance::OnPolicy);
    inst.group.trajectories.push_back(std::move(traj));
  }
  if (mixed_groups && rng.bernoulli(0.5)) {
    // pretend slot 0 is an injected cached success
    inst.group.rewards[0] = 1.0;
    inst.group.trajectories[0].reward = 1.0;
    inst.group.provenance[0] = SlotProvenance::Cached;
    inst.group.trajectories[0].provenance = SlotProvenance::Cached;
  }
  inst.theta = perturbed(inst.theta_old, rng, 0.15);
  return inst;
}

// ---------------------------------------------------------------------------
// Independent branch-table reference (Algorithm-2 style finalization)
// ---------------------------------------------------------------------------

struct ReferenceOutcome {
  rl::RolloutGroup group;
  bool replaced = false;
  std::optional<Trajectory> cache_write;
};

inline ReferenceOutcome reference_finalize(const rl::RolloutGroup& input,
                                           const assim::GuidanceCache& cache,
                                           assim::UpdateRule rule,
                                           const policy::PolicyParams& params,
                                           Rng rng /* by value: own stream */,
                                           bool dynamic_updates) {
  ReferenceOutcome out;
  out.group = input;

  std::vector<std::size_t> succ;
  for (std::size_t i = 0; i < input.rewards.size(); ++i) {
    if (input.rewards[i] == 1.0) succ.push_back(i);
  }

  if (!succ.empty()) {
    if (dynamic_updates) {
      std::size_t pick = succ.front();
      if (succ.size() > 1) {
        switch (rule) {
          case assim::UpdateRule::Random:
            pick = succ[static_cast<std::size_t>(
                rng.uniform_int(static_cast<int>(succ.size())))];
            break;
          case assim::UpdateRule::HighestLogProb: {
            double best = -1e300;
            for (std::size_t idx : succ) {
              double acc = 0.0;
              const auto& steps = input.trajectories[idx].steps;
              for (const auto& s : steps) {
                acc += policy::logprob(params, s.ctx, s.action);
              }
              const double mean =
                  steps.empty() ? 0.0 : acc / static_cast<double>(steps.size());
              if (mean > best) {
                best = mean;
                pick = idx;
              }
            }
            break;
          }
          case assim::UpdateRule::ShortestStep: {
            std::size_t best_len = SIZE_MAX;
            for (std::size_t idx : succ) {
              if (input.trajectories[idx].steps.size() < best_len) {
                best_len = input.trajectories[idx].steps.size();
                pick = idx;
              }
            }
            break;
          }
        }
      }
      out.cache_write = input.trajectories[pick];
    }
    return out;
  }

  auto it = cache.entries.find(input.task_id);
  if (it != cache.entries.end()) {
    out.group.trajectories[0] = it->second.injection;
    out.group.rewards[0] = 1.0;
    out.group.provenance[0] = SlotProvenance::Cached;
    out.replaced = true;
  }
  return out;
}

}  // namespace fixtures
