#pragma once

#include <string>
#include <vector>

#include "bepa/trajectory.hpp"

namespace bepa::expert {

using env::ScreenGraph;
using env::TaskSpec;

// Composite action space of the scripted framework agent. Deliberately not
// the policy's primitive space; conversion has to bridge the two.
struct CompositeStep {
  enum class Kind { Navigate, Set, Submit };
  Kind kind = Kind::Submit;
  int target_screen = -1;   // Navigate
  std::string key, value;   // Set

  static CompositeStep navigate(int target);
  static CompositeStep set(std::string key, std::string value);
  static CompositeStep submit();

  bool operator==(const CompositeStep& o) const = default;
};

struct ExpertTrace {
  std::string task_id;
  std::vector<CompositeStep> steps;
  bool success = false;
};

struct ConvertedStep {
  policy::Context ctx;
  env::ActionToken action;
};

// Expert trace mapped into the policy's primitive action space, with
// contexts reconstructed by popup-free replay. No dismiss actions are ever
// inserted, so these traces stay brittle once popups fire.
struct ConvertedTrace {
  std::string task_id;
  std::vector<ConvertedStep> steps;
};

struct Plan {
  std::string task_id;
  std::vector<std::string> subgoals;
};

// Shortest-path composite solution via breadth-first search over
// (screen, satisfied-goal-keys). One navigate per hop, then the goal key
// settings, then submit. success reflects whether the converted replay
// passes the verifier.
ExpertTrace solve_expert(const TaskSpec& task, const ScreenGraph& graph);

// Expands navigates into click sequences along shortest paths, maps set to
// setkey and submit to finish. Contexts come from a popup-free replay with
// the given history window.
ConvertedTrace convert_trace(const ExpertTrace& trace, const TaskSpec& task,
                             const ScreenGraph& graph, int history_k = 3);

// One plan token per composite step ("goto:<screen>", "set:<k>=<v>",
// "finish"), consecutive duplicates merged.
Plan extract_plan(const ExpertTrace& trace);

// Replays a fixed primitive action sequence and returns the final reward.
// Popups follow the task's configured probability unless overridden.
double replay_actions(const std::vector<env::ActionToken>& actions,
                      const TaskSpec& task, const ScreenGraph& graph,
                      std::uint64_t episode_seed, double popup_prob_override);

// Greedily realizes the plan's subgoals in a popup-free environment and
// returns the final reward.
double replay_plan_greedy(const Plan& plan, const TaskSpec& task,
                          const ScreenGraph& graph);

// Wraps a converted trace as a trajectory: steps scored under the given
// params, reward fixed to the popup-free replay outcome.
Trajectory converted_to_trajectory(const ConvertedTrace& conv,
                                   const TaskSpec& task,
                                   const ScreenGraph& graph,
                                   const policy::PolicyParams& params);

void write_expert_traces(const std::string& path,
                         const std::vector<ExpertTrace>& traces);
std::vector<ExpertTrace> load_expert_traces(const std::string& path);
void write_plans(const std::string& path, const std::vector<Plan>& plans);
void write_converted(const std::string& path,
                     const std::vector<ConvertedTrace>& traces);
std::vector<ConvertedTrace> load_converted(const std::string& path);

}  // namespace bepa::expert
