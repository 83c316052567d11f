#include "bepa/env.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bepa/errors.hpp"

namespace bepa::env {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const Screen& ScreenGraph::at(int id) const {
  auto it = screens.find(id);
  if (it == screens.end()) {
    throw ConfigError("unknown screen id " + std::to_string(id));
  }
  return it->second;
}

void ScreenGraph::validate() const {
  for (const auto& [id, screen] : screens) {
    if (screen.id != id) {
      throw ConfigError("screen id mismatch at " + std::to_string(id));
    }
    std::set<std::string> seen;
    for (const auto& w : screen.widgets) {
      if (!seen.insert(w).second) {
        throw ConfigError("duplicate widget '" + w + "' on screen " +
                          std::to_string(id));
      }
      auto it = screen.transitions.find(w);
      if (it == screen.transitions.end()) {
        throw ConfigError("widget '" + w + "' has no transition on screen " +
                          std::to_string(id));
      }
      if (!has_screen(it->second)) {
        throw ConfigError("transition from screen " + std::to_string(id) +
                          " targets unknown screen " +
                          std::to_string(it->second));
      }
    }
    for (const auto& [w, _] : screen.transitions) {
      if (!seen.count(w)) {
        throw ConfigError("transition for undeclared widget '" + w +
                          "' on screen " + std::to_string(id));
      }
    }
    for (const auto& k : screen.mutable_keys) {
      if (!key_values.count(k)) {
        throw ConfigError("screen " + std::to_string(id) +
                          " sets undeclared key '" + k + "'");
      }
    }
  }
}

void TaskSpec::validate(const ScreenGraph& graph) const {
  if (horizon < 1) throw ConfigError("task " + task_id + ": horizon < 1");
  if (popup_prob < 0.0 || popup_prob > 1.0) {
    throw ConfigError("task " + task_id + ": popup_prob outside [0,1]");
  }
  if (!graph.has_screen(start_screen)) {
    throw ConfigError("task " + task_id + ": unknown start screen " +
                      std::to_string(start_screen));
  }
  if (!graph.has_screen(goal.target_screen)) {
    throw ConfigError("task " + task_id + ": unknown goal screen " +
                      std::to_string(goal.target_screen));
  }
  for (const auto& [k, v] : goal.required_keys) {
    auto it = graph.key_values.find(k);
    if (it == graph.key_values.end()) {
      throw ConfigError("task " + task_id + ": goal uses undeclared key '" +
                        k + "'");
    }
    if (std::find(it->second.begin(), it->second.end(), v) ==
        it->second.end()) {
      throw ConfigError("task " + task_id + ": goal value '" + v +
                        "' not declared for key '" + k + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

ActionToken ActionToken::click(std::string widget) {
  return {ActionKind::Click, std::move(widget), ""};
}
ActionToken ActionToken::setkey(std::string key, std::string value) {
  return {ActionKind::SetKey, std::move(key), std::move(value)};
}
ActionToken ActionToken::dismiss() { return {ActionKind::Dismiss, "", ""}; }
ActionToken ActionToken::finish() { return {ActionKind::Finish, "", ""}; }

std::string ActionToken::key() const {
  switch (kind) {
    case ActionKind::Click:
      return "click:" + arg1;
    case ActionKind::SetKey:
      return "setkey:" + arg1 + "=" + arg2;
    case ActionKind::Dismiss:
      return "dismiss";
    case ActionKind::Finish:
      return "finish";
  }
  return "?";
}

ActionToken ActionToken::parse(const std::string& text) {
  if (text == "dismiss") return dismiss();
  if (text == "finish") return finish();
  if (text.rfind("click:", 0) == 0) return click(text.substr(6));
  if (text.rfind("setkey:", 0) == 0) {
    auto body = text.substr(7);
    auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw IoError("malformed setkey token: " + text);
    }
    return setkey(body.substr(0, eq), body.substr(eq + 1));
  }
  throw IoError("unknown action token: " + text);
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

Observation observe(const ScreenGraph& graph, const EnvState& state) {
  const Screen& screen = graph.at(state.current_screen);
  Observation obs;
  obs.screen_id = screen.id;
  obs.widgets = screen.widgets;
  for (const auto& k : screen.mutable_keys) {
    for (const auto& v : graph.key_values.at(k)) {
      obs.settable.emplace_back(k, v);
    }
  }
  obs.popup_active = state.popup_active;
  return obs;
}

std::pair<EnvState, Observation> reset(const ScreenGraph& graph,
                                       const TaskSpec& task) {
  return reset(graph, task, task.seed);
}

std::pair<EnvState, Observation> reset(const ScreenGraph& graph,
                                       const TaskSpec& task,
                                       std::uint64_t episode_seed) {
  task.validate(graph);
  EnvState state;
  state.current_screen = task.start_screen;
  state.popup_active = false;
  state.steps_taken = 0;
  state.done = false;
  state.rng = Rng(episode_seed);
  return {state, observe(graph, state)};
}

double verify(const EnvState& state, const TaskSpec& task) {
  if (state.current_screen != task.goal.target_screen) return 0.0;
  for (const auto& [k, v] : task.goal.required_keys) {
    auto it = state.state_keys.find(k);
    if (it == state.state_keys.end() || it->second != v) return 0.0;
  }
  return 1.0;
}

StepOutcome step(const ScreenGraph& graph, const TaskSpec& task,
                 EnvState& state, const ActionToken& action) {
  if (state.done) throw UsageError("step on a terminal state");

  const bool blocked =
      state.popup_active && action.kind != ActionKind::Dismiss;
  bool finished = false;

  if (!blocked) {
    const Screen& screen = graph.at(state.current_screen);
    switch (action.kind) {
      case ActionKind::Click: {
        auto it = screen.transitions.find(action.arg1);
        if (it != screen.transitions.end()) state.current_screen = it->second;
        // clicking a widget that is not present is a dead click
        break;
      }
      case ActionKind::SetKey: {
        if (screen.mutable_keys.count(action.arg1)) {
          const auto& values = graph.key_values.at(action.arg1);
          if (std::find(values.begin(), values.end(), action.arg2) !=
              values.end()) {
            state.state_keys[action.arg1] = action.arg2;
          }
        }
        break;
      }
      case ActionKind::Dismiss:
        state.popup_active = false;
        break;
      case ActionKind::Finish:
        finished = true;
        break;
    }
  }

  state.steps_taken += 1;

  StepOutcome out;
  if (finished) {
    state.done = true;
    out.reward = verify(state, task);
  } else if (state.steps_taken >= task.horizon) {
    state.done = true;
    out.reward = 0.0;
  } else {
    // one Bernoulli popup draw per surviving step
    if (state.rng.bernoulli(task.popup_prob)) state.popup_active = true;
  }
  out.done = state.done;
  out.observation = observe(graph, state);
  return out;
}

std::string serialize_state(const EnvState& state) {
  std::ostringstream os;
  os << state.current_screen << '|' << state.popup_active << '|'
     << state.steps_taken << '|' << state.done << '|';
  for (const auto& [k, v] : state.state_keys) os << k << '=' << v << ',';
  os << '|' << state.rng.serialize();
  return os.str();
}

// ---------------------------------------------------------------------------
// Suite generation
// ---------------------------------------------------------------------------

namespace {

int draw_len(Rng& rng, int lo, int hi) {
  if (lo > hi) throw ConfigError("path length range inverted");
  return lo + rng.uniform_int(hi - lo + 1);
}

struct CategorySpec {
  std::string prefix;
  int count;
  int len_min, len_max;
  int keys;
};

}  // namespace

TaskSuite generate_task_suite(const SuiteGenConfig& config,
                              std::uint64_t seed) {
  const std::vector<CategorySpec> categories = {
      {"easy", config.easy_tasks, config.easy_len_min, config.easy_len_max, 0},
      {"hard", config.hard_tasks, config.hard_len_min, config.hard_len_max,
       config.hard_keys},
      {"xonly", config.expert_only_tasks, config.expert_only_len_min,
       config.expert_only_len_max, config.expert_only_keys},
  };

  for (const auto& cat : categories) {
    // shortest solution: len clicks + keys + finish
    if (cat.count > 0 && cat.len_max + cat.keys + 1 > config.horizon) {
      throw ConfigError("infeasible suite config: '" + cat.prefix +
                        "' tasks need up to " +
                        std::to_string(cat.len_max + cat.keys + 1) +
                        " steps but horizon is " +
                        std::to_string(config.horizon));
    }
  }
  if (config.values_per_key < 1) {
    throw ConfigError("values_per_key must be >= 1");
  }

  TaskSuite suite;
  Rng rng(seed);
  int next_screen = 0;
  int task_index = 0;

  auto add_screen = [&suite, &next_screen]() -> Screen& {
    Screen s;
    s.id = next_screen++;
    return suite.graph.screens.emplace(s.id, std::move(s)).first->second;
  };

  for (const auto& cat : categories) {
    for (int t = 0; t < cat.count; ++t, ++task_index) {
      const int len = draw_len(rng, cat.len_min, cat.len_max);

      std::vector<int> corridor;
      corridor.reserve(len + 1);
      for (int i = 0; i <= len; ++i) corridor.push_back(add_screen().id);

      for (int i = 0; i < len; ++i) {
        Screen& s = suite.graph.screens.at(corridor[i]);
        std::vector<int> targets = {corridor[i + 1]};
        // recoverable distractors: back to start, then a self loop
        std::vector<int> pool = {corridor[0], corridor[i]};
        if (i > 0) pool.push_back(corridor[i - 1]);
        for (int cand : pool) {
          if (static_cast<int>(targets.size()) > config.distractors) break;
          if (std::find(targets.begin(), targets.end(), cand) ==
              targets.end()) {
            targets.push_back(cand);
          }
        }
        for (int target : targets) {
          std::string label = "nav_" + std::to_string(target);
          s.widgets.push_back(label);
          s.transitions[label] = target;
        }
      }

      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%02d", cat.prefix.c_str(), t);
      TaskSpec task;
      task.task_id = idbuf;
      task.start_screen = corridor.front();
      task.goal.target_screen = corridor.back();
      task.horizon = config.horizon;
      task.popup_prob = config.popup_prob;
      task.seed = derive_seed(seed, "task", task_index);

      Screen& goal_screen = suite.graph.screens.at(corridor.back());
      for (int k = 0; k < cat.keys; ++k) {
        std::string key =
            "key_" + std::string(idbuf) + "_" + std::to_string(k);
        std::vector<std::string> values;
        for (int v = 0; v < config.values_per_key; ++v) {
          values.push_back("v" + std::to_string(v));
        }
        suite.graph.key_values[key] = values;
        goal_screen.mutable_keys.insert(key);
        task.goal.required_keys[key] = values.back();
      }

      suite.tasks.push_back(std::move(task));
    }
  }

  suite.graph.validate();
  for (const auto& task : suite.tasks) task.validate(suite.graph);
  return suite;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {

void write_record(std::ostream& os, const std::string& type,
                  const std::string& id, const json& payload) {
  os << type << '\t' << id << '\t' << payload.dump() << '\n';
}

struct Record {
  std::string type;
  std::string id;
  json payload;
};

std::vector<Record> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Record> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab1 = line.find('\t');
    auto tab2 = tab1 == std::string::npos ? std::string::npos
                                          : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw IoError(path + ": malformed record at line " +
                    std::to_string(lineno));
    }
    Record rec;
    rec.type = line.substr(0, tab1);
    rec.id = line.substr(tab1 + 1, tab2 - tab1 - 1);
    try {
      rec.payload = json::parse(line.substr(tab2 + 1));
    } catch (const json::exception& e) {
      throw IoError(path + ": bad payload at line " + std::to_string(lineno) +
                    ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

void write_graph(const std::string& path, const ScreenGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& [id, screen] : graph.screens) {
    json payload;
    payload["widgets"] = screen.widgets;
    payload["transitions"] = json::object();
    for (const auto& [w, target] : screen.transitions) {
      payload["transitions"][w] = target;
    }
    payload["keys"] = screen.mutable_keys;
    write_record(out, "screen", std::to_string(id), payload);
  }
  json kv = json::object();
  for (const auto& [k, values] : graph.key_values) kv[k] = values;
  write_record(out, "keyvalues", "-", kv);
}

ScreenGraph load_graph(const std::string& path) {
  ScreenGraph graph;
  for (const auto& rec : read_records(path)) {
    if (rec.type == "screen") {
      Screen screen;
      screen.id = std::stoi(rec.id);
      screen.widgets = rec.payload.at("widgets").get<std::vector<std::string>>();
      for (const auto& [w, target] : rec.payload.at("transitions").items()) {
        screen.transitions[w] = target.get<int>();
      }
      for (const auto& k : rec.payload.at("keys")) {
        screen.mutable_keys.insert(k.get<std::string>());
      }
      graph.screens[screen.id] = std::move(screen);
    } else if (rec.type == "keyvalues") {
      for (const auto& [k, values] : rec.payload.items()) {
        graph.key_values[k] = values.get<std::vector<std::string>>();
      }
    } else {
      throw IoError(path + ": unknown record type '" + rec.type + "'");
    }
  }
  graph.validate();
  return graph;
}

void write_tasks(const std::string& path,
                 const std::vector<TaskSpec>& tasks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& task : tasks) {
    json payload;
    payload["start"] = task.start_screen;
    payload["target"] = task.goal.target_screen;
    payload["required"] = task.goal.required_keys;
    payload["horizon"] = task.horizon;
    payload["popup_prob"] = task.popup_prob;
    payload["seed"] = task.seed;
    write_record(out, "task", task.task_id, payload);
  }
}

std::vector<TaskSpec> load_tasks(const std::string& path,
                                 const ScreenGraph& graph) {
  std::vector<TaskSpec> tasks;
  for (const auto& rec : read_records(path)) {
    if (rec.type != "task") {
      throw IoError(path + ": unknown record type '" + rec.type + "'");
    }
    TaskSpec task;
    task.task_id = rec.id;
    task.start_screen = rec.payload.at("start").get<int>();
    task.goal.target_screen = rec.payload.at("target").get<int>();
    task.goal.required_keys =
        rec.payload.at("required").get<std::map<std::string, std::string>>();
    task.horizon = rec.payload.at("horizon").get<int>();
    task.popup_prob = rec.payload.at("popup_prob").get<double>();
    task.seed = rec.payload.at("seed").get<std::uint64_t>();
    task.validate(graph);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace bepa::env
