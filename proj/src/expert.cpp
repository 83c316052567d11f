#include "bepa/expert.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>

#include "bepa/errors.hpp"
#include "bepa/serde.hpp"

namespace bepa::expert {

using env::ActionToken;
using env::EnvState;
using json = nlohmann::json;

CompositeStep CompositeStep::navigate(int target) {
  CompositeStep s;
  s.kind = Kind::Navigate;
  s.target_screen = target;
  return s;
}

CompositeStep CompositeStep::set(std::string key, std::string value) {
  CompositeStep s;
  s.kind = Kind::Set;
  s.key = std::move(key);
  s.value = std::move(value);
  return s;
}

CompositeStep CompositeStep::submit() { return {}; }

namespace {

// Shortest screen path via BFS; empty when from == to, no path -> nullopt.
std::optional<std::vector<int>> screen_path(const ScreenGraph& graph,
                                            int from, int to) {
  if (from == to) return std::vector<int>{};
  std::map<int, int> parent;  // screen -> predecessor
  std::deque<int> frontier{from};
  parent[from] = from;
  while (!frontier.empty()) {
    int cur = frontier.front();
    frontier.pop_front();
    for (const auto& [w, target] : graph.at(cur).transitions) {
      if (parent.count(target)) continue;
      parent[target] = cur;
      if (target == to) {
        std::vector<int> path;
        for (int s = to; s != from; s = parent[s]) path.push_back(s);
        std::reverse(path.begin(), path.end());
        return path;
      }
      frontier.push_back(target);
    }
  }
  return std::nullopt;
}

// First widget (in display order) leading from screen `from` to `to`.
std::string widget_towards(const ScreenGraph& graph, int from, int to) {
  const env::Screen& screen = graph.at(from);
  for (const auto& w : screen.widgets) {
    if (screen.transitions.at(w) == to) return w;
  }
  throw ConversionError("stale graph: no widget from screen " +
                        std::to_string(from) + " to " + std::to_string(to));
}

}  // namespace

ExpertTrace solve_expert(const TaskSpec& task, const ScreenGraph& graph) {
  ExpertTrace trace;
  trace.task_id = task.task_id;

  // BFS over (screen, mask of satisfied goal keys). Moves: one screen hop
  // or setting one still-unsatisfied goal key.
  std::vector<std::pair<std::string, std::string>> goal_keys(
      task.goal.required_keys.begin(), task.goal.required_keys.end());
  const int full_mask = (1 << goal_keys.size()) - 1;

  struct Move {
    bool is_hop = false;
    int hop_target = -1;
    int key_index = -1;
  };
  using Node = std::pair<int, int>;  // (screen, mask)
  std::map<Node, std::pair<Node, Move>> parent;
  const Node start{task.start_screen, 0};
  parent[start] = {start, {}};
  std::deque<Node> frontier{start};
  std::optional<Node> goal_node;

  while (!frontier.empty() && !goal_node) {
    auto [screen_id, mask] = frontier.front();
    frontier.pop_front();
    const env::Screen& screen = graph.at(screen_id);

    auto visit = [&](Node next, Move move) {
      if (parent.count(next)) return;
      parent[next] = {{screen_id, mask}, move};
      if (next.first == task.goal.target_screen && next.second == full_mask) {
        goal_node = next;
      }
      frontier.push_back(next);
    };

    for (std::size_t i = 0; i < goal_keys.size() && !goal_node; ++i) {
      if ((mask >> i) & 1) continue;
      if (!screen.mutable_keys.count(goal_keys[i].first)) continue;
      Move move;
      move.key_index = static_cast<int>(i);
      visit({screen_id, mask | (1 << i)}, move);
    }
    for (const auto& w : screen.widgets) {
      if (goal_node) break;
      Move move;
      move.is_hop = true;
      move.hop_target = screen.transitions.at(w);
      visit({move.hop_target, mask}, move);
    }
  }

  if (!goal_node && !(start.first == task.goal.target_screen &&
                      0 == full_mask)) {
    trace.success = false;
    return trace;
  }

  std::vector<Move> moves;
  for (Node n = goal_node.value_or(start); n != start;) {
    auto& [prev, move] = parent[n];
    moves.push_back(move);
    n = prev;
  }
  std::reverse(moves.begin(), moves.end());

  for (const auto& move : moves) {
    if (move.is_hop) {
      trace.steps.push_back(CompositeStep::navigate(move.hop_target));
    } else {
      const auto& [k, v] = goal_keys[move.key_index];
      trace.steps.push_back(CompositeStep::set(k, v));
    }
  }
  trace.steps.push_back(CompositeStep::submit());

  // the trace counts as a success only if its converted replay verifies
  trace.success = true;
  ConvertedTrace conv = convert_trace(trace, task, graph);
  std::vector<ActionToken> actions;
  for (const auto& s : conv.steps) actions.push_back(s.action);
  trace.success = replay_actions(actions, task, graph, 0, 0.0) == 1.0;
  return trace;
}

ConvertedTrace convert_trace(const ExpertTrace& trace, const TaskSpec& task,
                             const ScreenGraph& graph, int history_k) {
  if (!trace.success) {
    throw ContractError("convert_trace requires a successful expert trace");
  }
  ConvertedTrace conv;
  conv.task_id = trace.task_id;

  TaskSpec quiet = task;
  quiet.popup_prob = 0.0;
  auto [state, obs] = env::reset(graph, quiet, quiet.seed);
  std::vector<ActionToken> history;

  auto emit = [&](const ActionToken& action) {
    policy::Context ctx;
    ctx.obs = obs;
    ctx.task_id = trace.task_id;
    ctx.history = history;
    conv.steps.push_back({ctx, action});
    env::StepOutcome out = env::step(graph, quiet, state, action);
    obs = out.observation;
    history.insert(history.begin(), action);
    if (static_cast<int>(history.size()) > history_k) {
      history.resize(history_k);
    }
  };

  for (const auto& step : trace.steps) {
    switch (step.kind) {
      case CompositeStep::Kind::Navigate: {
        auto path = screen_path(graph, state.current_screen,
                                step.target_screen);
        if (!path) {
          throw ConversionError("stale graph: screen " +
                                std::to_string(step.target_screen) +
                                " unreachable from " +
                                std::to_string(state.current_screen));
        }
        for (int hop : *path) {
          emit(ActionToken::click(
              widget_towards(graph, state.current_screen, hop)));
        }
        break;
      }
      case CompositeStep::Kind::Set:
        emit(ActionToken::setkey(step.key, step.value));
        break;
      case CompositeStep::Kind::Submit:
        emit(ActionToken::finish());
        break;
    }
  }
  return conv;
}

Plan extract_plan(const ExpertTrace& trace) {
  if (!trace.success) {
    throw ContractError("extract_plan requires a successful expert trace");
  }
  if (trace.steps.empty()) {
    throw ContractError("extract_plan on an empty trace");
  }
  Plan plan;
  plan.task_id = trace.task_id;
  for (const auto& step : trace.steps) {
    std::string token;
    switch (step.kind) {
      case CompositeStep::Kind::Navigate:
        token = "goto:" + std::to_string(step.target_screen);
        break;
      case CompositeStep::Kind::Set:
        token = "set:" + step.key + "=" + step.value;
        break;
      case CompositeStep::Kind::Submit:
        token = "finish";
        break;
    }
    if (plan.subgoals.empty() || plan.subgoals.back() != token) {
      plan.subgoals.push_back(token);
    }
  }
  return plan;
}

double replay_actions(const std::vector<ActionToken>& actions,
                      const TaskSpec& task, const ScreenGraph& graph,
                      std::uint64_t episode_seed,
                      double popup_prob_override) {
  TaskSpec variant = task;
  if (popup_prob_override >= 0.0) variant.popup_prob = popup_prob_override;
  auto [state, obs] = env::reset(graph, variant, episode_seed);
  double reward = 0.0;
  for (const auto& action : actions) {
    if (state.done) break;
    reward = env::step(graph, variant, state, action).reward;
  }
  return state.done ? reward : 0.0;
}

double replay_plan_greedy(const Plan& plan, const TaskSpec& task,
                          const ScreenGraph& graph) {
  TaskSpec quiet = task;
  quiet.popup_prob = 0.0;
  auto [state, obs] = env::reset(graph, quiet, quiet.seed);
  double reward = 0.0;

  for (const auto& token : plan.subgoals) {
    if (state.done) break;
    if (token.rfind("goto:", 0) == 0) {
      const int target = std::stoi(token.substr(5));
      auto path = screen_path(graph, state.current_screen, target);
      if (!path) return 0.0;
      for (int hop : *path) {
        if (state.done) break;
        reward = env::step(graph, quiet, state,
                           ActionToken::click(widget_towards(
                               graph, state.current_screen, hop)))
                     .reward;
      }
    } else if (token.rfind("set:", 0) == 0) {
      auto body = token.substr(4);
      auto eq = body.find('=');
      reward = env::step(graph, quiet, state,
                         ActionToken::setkey(body.substr(0, eq),
                                             body.substr(eq + 1)))
                   .reward;
    } else if (token == "finish") {
      reward = env::step(graph, quiet, state, ActionToken::finish()).reward;
    }
  }
  return state.done ? reward : 0.0;
}

Trajectory converted_to_trajectory(const ConvertedTrace& conv,
                                   const TaskSpec& task,
                                   const ScreenGraph& graph,
                                   const policy::PolicyParams& params) {
  Trajectory traj;
  traj.task_id = conv.task_id;
  traj.provenance = SlotProvenance::OffPolicyExpert;
  for (const auto& step : conv.steps) {
    TrajStep ts;
    ts.ctx = step.ctx;
    ts.action = step.action;
    ts.logprob = policy::logprob(params, step.ctx, step.action);
    ts.entropy = policy::entropy(params, step.ctx);
    traj.steps.push_back(std::move(ts));
  }
  std::vector<ActionToken> actions;
  for (const auto& s : conv.steps) actions.push_back(s.action);
  traj.reward = replay_actions(actions, task, graph, 0, 0.0);
  return traj;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json composite_to_json(const CompositeStep& s) {
  switch (s.kind) {
    case CompositeStep::Kind::Navigate:
      return json{{"op", "navigate"}, {"target", s.target_screen}};
    case CompositeStep::Kind::Set:
      return json{{"op", "set"}, {"key", s.key}, {"value", s.value}};
    case CompositeStep::Kind::Submit:
      return json{{"op", "submit"}};
  }
  return {};
}

CompositeStep composite_from_json(const json& j) {
  const std::string op = j.at("op").get<std::string>();
  if (op == "navigate") return CompositeStep::navigate(j.at("target"));
  if (op == "set") return CompositeStep::set(j.at("key"), j.at("value"));
  if (op == "submit") return CompositeStep::submit();
  throw IoError("unknown composite op '" + op + "'");
}

}  // namespace

void write_expert_traces(const std::string& path,
                         const std::vector<ExpertTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& trace : traces) {
    json steps = json::array();
    for (const auto& s : trace.steps) steps.push_back(composite_to_json(s));
    json j{{"task", trace.task_id},
           {"success", trace.success},
           {"steps", steps}};
    out << j.dump() << "\n";
  }
}

std::vector<ExpertTrace> load_expert_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ExpertTrace> traces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ": bad record at line " + std::to_string(lineno) +
                    ": " + e.what());
    }
    ExpertTrace trace;
    trace.task_id = j.at("task").get<std::string>();
    trace.success = j.at("success").get<bool>();
    for (const auto& s : j.at("steps")) {
      trace.steps.push_back(composite_from_json(s));
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

void write_plans(const std::string& path, const std::vector<Plan>& plans) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& plan : plans) {
    json j{{"task", plan.task_id}, {"subgoals", plan.subgoals}};
    out << j.dump() << "\n";
  }
}

void write_converted(const std::string& path,
                     const std::vector<ConvertedTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& trace : traces) {
    json steps = json::array();
    for (const auto& s : trace.steps) {
      steps.push_back(json{{"ctx", s.ctx}, {"action", s.action}});
    }
    json j{{"task", trace.task_id}, {"steps", steps}};
    out << j.dump() << "\n";
  }
}

std::vector<ConvertedTrace> load_converted(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ConvertedTrace> traces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ": bad record at line " + std::to_string(lineno) +
                    ": " + e.what());
    }
    ConvertedTrace trace;
    trace.task_id = j.at("task").get<std::string>();
    for (const auto& s : j.at("steps")) {
      ConvertedStep step;
      s.at("ctx").get_to(step.ctx);
      s.at("action").get_to(step.action);
      trace.steps.push_back(std::move(step));
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

}  // namespace bepa::expert
