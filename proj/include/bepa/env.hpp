#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bepa/rng.hpp"

namespace bepa::env {

// ---------------------------------------------------------------------------
// Screen graph
// ---------------------------------------------------------------------------

struct Screen {
  int id = 0;
  // Widget labels in display order. Every widget has a transition; clicking
  // it navigates to the target screen.
  std::vector<std::string> widgets;
  std::map<std::string, int> transitions;  // widget label -> target screen id
  std::set<std::string> mutable_keys;      // state keys this screen can set
};

struct ScreenGraph {
  std::map<int, Screen> screens;
  // Declared value set per state key; setkey actions are enumerable from it.
  std::map<std::string, std::vector<std::string>> key_values;

  bool has_screen(int id) const { return screens.count(id) != 0; }
  const Screen& at(int id) const;

  // Checks transition targets, widget uniqueness and key declarations.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct GoalSpec {
  int target_screen = 0;
  std::map<std::string, std::string> required_keys;
};

struct TaskSpec {
  std::string task_id;
  int start_screen = 0;
  GoalSpec goal;
  int horizon = 15;
  double popup_prob = 0.1;
  std::uint64_t seed = 0;

  void validate(const ScreenGraph& graph) const;
};

// ---------------------------------------------------------------------------
// Actions and observations
// ---------------------------------------------------------------------------

enum class ActionKind { Click, SetKey, Dismiss, Finish };

struct ActionToken {
  ActionKind kind = ActionKind::Finish;
  std::string arg1;  // widget label | key
  std::string arg2;  // value (SetKey only)

  static ActionToken click(std::string widget);
  static ActionToken setkey(std::string key, std::string value);
  static ActionToken dismiss();
  static ActionToken finish();

  // Canonical form, e.g. "click:nav_3", "setkey:k=v", "dismiss", "finish".
  std::string key() const;
  static ActionToken parse(const std::string& text);

  bool operator==(const ActionToken& o) const = default;
  auto operator<=>(const ActionToken& o) const = default;
};

struct Observation {
  int screen_id = 0;
  std::vector<std::string> widgets;
  // (key, value) pairs settable on this screen, in deterministic order.
  std::vector<std::pair<std::string, std::string>> settable;
  bool popup_active = false;

  bool operator==(const Observation& o) const = default;
};

struct EnvState {
  int current_screen = 0;
  std::map<std::string, std::string> state_keys;
  bool popup_active = false;
  int steps_taken = 0;
  bool done = false;
  Rng rng;
};

struct StepOutcome {
  Observation observation;
  bool done = false;
  double reward = 0.0;  // in {0,1}; nonzero only when done
};

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

Observation observe(const ScreenGraph& graph, const EnvState& state);

// Fresh episode at the task's start screen; rng seeded from the task seed.
std::pair<EnvState, Observation> reset(const ScreenGraph& graph,
                                       const TaskSpec& task);

// Same, with an explicit episode seed (rollout slots get independent but
// reproducible popup draws).
std::pair<EnvState, Observation> reset(const ScreenGraph& graph,
                                       const TaskSpec& task,
                                       std::uint64_t episode_seed);

// Advances the state by one action. While a popup is active every action
// except dismiss is a no-op on screen and state but still consumes a step.
// finish terminates and pays the verifier's verdict; running out of horizon
// terminates with reward 0.
StepOutcome step(const ScreenGraph& graph, const TaskSpec& task,
                 EnvState& state, const ActionToken& action);

// Pure goal predicate: 1 iff the state satisfies the task's goal.
double verify(const EnvState& state, const TaskSpec& task);

std::string serialize_state(const EnvState& state);

// ---------------------------------------------------------------------------
// Suite generation
// ---------------------------------------------------------------------------

struct SuiteGenConfig {
  int easy_tasks = 6;
  int hard_tasks = 4;
  int expert_only_tasks = 10;
  int easy_len_min = 1, easy_len_max = 2;
  int hard_len_min = 3, hard_len_max = 4;
  int expert_only_len_min = 4, expert_only_len_max = 6;
  int hard_keys = 1;
  int expert_only_keys = 1;
  int distractors = 1;       // extra widgets per corridor screen
  int values_per_key = 2;
  double popup_prob = 0.1;
  int horizon = 15;
};

struct TaskSuite {
  ScreenGraph graph;
  std::vector<TaskSpec> tasks;
};

// Deterministic synthetic suite: each task owns a corridor of screens from a
// private start screen to its goal screen, with recoverable distractor
// widgets along the way. Every task is solvable by the scripted expert
// within the horizon, which the config check enforces up front.
TaskSuite generate_task_suite(const SuiteGenConfig& config,
                              std::uint64_t seed);

// Line-delimited text formats: "<record-type>\t<id>\t<json payload>".
void write_graph(const std::string& path, const ScreenGraph& graph);
void write_tasks(const std::string& path,
                 const std::vector<TaskSpec>& tasks);
ScreenGraph load_graph(const std::string& path);
std::vector<TaskSpec> load_tasks(const std::string& path,
                                 const ScreenGraph& graph);

}  // namespace bepa::env
