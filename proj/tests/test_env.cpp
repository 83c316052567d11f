#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bepa/errors.hpp"
#include "fixtures.hpp"

using namespace bepa;
namespace fs = std::filesystem;

TEST_CASE("reset is deterministic and starts clean") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false, 0.3, 7);

  auto [s1, o1] = env::reset(graph, task);
  auto [s2, o2] = env::reset(graph, task);
  CHECK(env::serialize_state(s1) == env::serialize_state(s2));
  CHECK(o1 == o2);
  CHECK(s1.steps_taken == 0);
  CHECK_FALSE(s1.popup_active);
  CHECK(s1.current_screen == 0);
}

TEST_CASE("reset rejects an unknown start screen") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false);
  task.start_screen = 99;
  CHECK_THROWS_AS(env::reset(graph, task), ConfigError);
}

TEST_CASE("popup blocks everything except dismiss") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false, 0.0);
  auto [state, obs] = env::reset(graph, task);
  state.popup_active = true;

  SUBCASE("click is a no-op but consumes a step") {
    auto out = env::step(graph, task, state, env::ActionToken::click("nav_1"));
    CHECK(state.current_screen == 0);
    CHECK(state.steps_taken == 1);
    CHECK(state.popup_active);
    CHECK_FALSE(out.done);
  }
  SUBCASE("finish is blocked too") {
    auto out = env::step(graph, task, state, env::ActionToken::finish());
    CHECK_FALSE(out.done);
    CHECK(state.steps_taken == 1);
  }
  SUBCASE("dismiss clears the popup") {
    env::step(graph, task, state, env::ActionToken::dismiss());
    CHECK_FALSE(state.popup_active);
  }
}

TEST_CASE("finish pays the verifier's verdict") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(true, 0.0);
  auto [state, obs] = env::reset(graph, task);

  env::step(graph, task, state, env::ActionToken::click("nav_1"));
  env::step(graph, task, state, env::ActionToken::click("nav_2"));
  env::step(graph, task, state, env::ActionToken::click("nav_3"));

  SUBCASE("goal satisfied") {
    env::step(graph, task, state, env::ActionToken::setkey("color", "blue"));
    auto out = env::step(graph, task, state, env::ActionToken::finish());
    CHECK(out.done);
    CHECK(out.reward == 1.0);
  }
  SUBCASE("goal unmet terminates with reward 0 rather than erroring") {
    auto out = env::step(graph, task, state, env::ActionToken::finish());
    CHECK(out.done);
    CHECK(out.reward == 0.0);
  }
}

TEST_CASE("stepping a terminal state is a usage error") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false, 0.0);
  auto [state, obs] = env::reset(graph, task);
  env::step(graph, task, state, env::ActionToken::finish());
  CHECK(state.done);
  CHECK_THROWS_AS(
      env::step(graph, task, state, env::ActionToken::dismiss()),
      UsageError);
}

TEST_CASE("verifier is a pure predicate") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(true);
  env::EnvState state;
  state.current_screen = 3;

  CHECK(env::verify(state, task) == 0.0);  // key missing
  state.state_keys["color"] = "blue";
  CHECK(env::verify(state, task) == 1.0);
  CHECK(env::verify(state, task) == 1.0);  // repeatable
  state.current_screen = 2;
  CHECK(env::verify(state, task) == 0.0);

  auto task_screen_only = fixtures::chain_task(false);
  env::EnvState at_goal;
  at_goal.current_screen = 3;
  CHECK(env::verify(at_goal, task_screen_only) == 1.0);
}

TEST_CASE("horizon exhaustion terminates with reward 0") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false, 0.0);
  task.horizon = 3;
  auto [state, obs] = env::reset(graph, task);
  env::StepOutcome out;
  for (int i = 0; i < 3; ++i) {
    out = env::step(graph, task, state, env::ActionToken::click("nav_0"));
  }
  CHECK(out.done);
  CHECK(out.reward == 0.0);
  CHECK(state.steps_taken == 3);
}

TEST_CASE("rewards are sparse and binary along any rollout") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(true, 0.4, 3);
  Rng rng(99);
  auto vocab = policy::build_vocab(graph);
  for (int episode = 0; episode < 50; ++episode) {
    auto [state, obs] = env::reset(graph, task, rng.next_u64());
    while (!state.done) {
      auto action = vocab[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(vocab.size())))];
      auto out = env::step(graph, task, state, action);
      if (!out.done) CHECK(out.reward == 0.0);
      CHECK((out.reward == 0.0 || out.reward == 1.0));
      CHECK(state.steps_taken <= task.horizon);
    }
  }
}

TEST_CASE("fixed seed and action sequence reproduce the trajectory exactly") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(true, 0.5, 11);
  std::vector<env::ActionToken> actions;
  Rng pick(5);
  auto vocab = policy::build_vocab(graph);
  for (int i = 0; i < 12; ++i) {
    actions.push_back(vocab[static_cast<std::size_t>(
        pick.uniform_int(static_cast<int>(vocab.size())))]);
  }
  auto run = [&] {
    std::vector<std::string> log;
    auto [state, obs] = env::reset(graph, task, 1234);
    for (const auto& a : actions) {
      if (state.done) break;
      env::step(graph, task, state, a);
      log.push_back(env::serialize_state(state));
    }
    return log;
  };
  CHECK(run() == run());
}

TEST_CASE("popup draws are independent across episode seeds") {
  auto graph = fixtures::chain_graph();
  auto task = fixtures::chain_task(false, 0.5, 0);
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [s1, o1] = env::reset(graph, task, seed);
    auto [s2, o2] = env::reset(graph, task, seed + 1);
    env::step(graph, task, s1, env::ActionToken::click("nav_1"));
    env::step(graph, task, s2, env::ActionToken::click("nav_1"));
    if (s1.popup_active != s2.popup_active) ++differing;
  }
  CHECK(differing > 0);
}

TEST_CASE("suite generation is deterministic and feasibility-checked") {
  env::SuiteGenConfig cfg;
  cfg.easy_tasks = 2;
  cfg.hard_tasks = 1;
  cfg.expert_only_tasks = 2;

  SUBCASE("same config and seed give identical files") {
    auto s1 = env::generate_task_suite(cfg, 42);
    auto s2 = env::generate_task_suite(cfg, 42);
    fs::path dir = fs::temp_directory_path() / "bepa_suite_test";
    fs::create_directories(dir);
    env::write_graph((dir / "g1.tsv").string(), s1.graph);
    env::write_graph((dir / "g2.tsv").string(), s2.graph);
    env::write_tasks((dir / "t1.tsv").string(), s1.tasks);
    env::write_tasks((dir / "t2.tsv").string(), s2.tasks);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "g1.tsv") == slurp(dir / "g2.tsv"));
    CHECK(slurp(dir / "t1.tsv") == slurp(dir / "t2.tsv"));
    CHECK(slurp(dir / "g1.tsv").size() > 0);
  }

  SUBCASE("path longer than the horizon is rejected") {
    cfg.expert_only_len_min = 20;
    cfg.expert_only_len_max = 20;
    cfg.horizon = 15;
    CHECK_THROWS_AS(env::generate_task_suite(cfg, 1), ConfigError);
  }

  SUBCASE("graph and task files round-trip") {
    auto suite = env::generate_task_suite(cfg, 42);
    fs::path dir = fs::temp_directory_path() / "bepa_suite_rt";
    fs::create_directories(dir);
    env::write_graph((dir / "graph.tsv").string(), suite.graph);
    env::write_tasks((dir / "tasks.tsv").string(), suite.tasks);
    auto graph = env::load_graph((dir / "graph.tsv").string());
    auto tasks = env::load_tasks((dir / "tasks.tsv").string(), graph);
    CHECK(graph.screens.size() == suite.graph.screens.size());
    REQUIRE(tasks.size() == suite.tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      CHECK(tasks[i].task_id == suite.tasks[i].task_id);
      CHECK(tasks[i].seed == suite.tasks[i].seed);
      CHECK(tasks[i].goal.target_screen == suite.tasks[i].goal.target_screen);
    }
  }
}

TEST_CASE("malformed suite files report the offending line") {
  fs::path dir = fs::temp_directory_path() / "bepa_badfile";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "bad.tsv");
    out << "screen\t0\t{\"widgets\":[],\"transitions\":{},\"keys\":[]}\n";
    out << "screen\t1\tnot-json\n";
  }
  try {
    env::load_graph((dir / "bad.tsv").string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}
