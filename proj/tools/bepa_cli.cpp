#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "bepa/errors.hpp"
#include "bepa/harness.hpp"

namespace {

using namespace bepa;

int cmd_generate_suite(const std::string& config_path, std::uint64_t seed,
                       const std::string& out_dir) {
  env::SuiteGenConfig gen;
  if (!config_path.empty()) {
    auto kv = harness::parse_config_file(config_path);
    for (const auto& [key, value] : kv) {
      auto num = [&](const std::string& v) { return std::stod(v); };
      if (key == "easy_tasks") gen.easy_tasks = std::stoi(value);
      else if (key == "hard_tasks") gen.hard_tasks = std::stoi(value);
      else if (key == "expert_only_tasks")
        gen.expert_only_tasks = std::stoi(value);
      else if (key == "easy_len_min") gen.easy_len_min = std::stoi(value);
      else if (key == "easy_len_max") gen.easy_len_max = std::stoi(value);
      else if (key == "hard_len_min") gen.hard_len_min = std::stoi(value);
      else if (key == "hard_len_max") gen.hard_len_max = std::stoi(value);
      else if (key == "expert_only_len_min")
        gen.expert_only_len_min = std::stoi(value);
      else if (key == "expert_only_len_max")
        gen.expert_only_len_max = std::stoi(value);
      else if (key == "hard_keys") gen.hard_keys = std::stoi(value);
      else if (key == "expert_only_keys")
        gen.expert_only_keys = std::stoi(value);
      else if (key == "distractors") gen.distractors = std::stoi(value);
      else if (key == "values_per_key") gen.values_per_key = std::stoi(value);
      else if (key == "popup_prob") gen.popup_prob = num(value);
      else if (key == "horizon") gen.horizon = std::stoi(value);
      else throw ConfigError("unknown suite config key '" + key + "'");
    }
  }
  env::TaskSuite suite = env::generate_task_suite(gen, seed);
  std::filesystem::create_directories(out_dir);
  env::write_graph(out_dir + "/graph.tsv", suite.graph);
  env::write_tasks(out_dir + "/tasks.tsv", suite.tasks);
  std::cout << "wrote " << suite.graph.screens.size() << " screens and "
            << suite.tasks.size() << " tasks to " << out_dir << "\n";
  return 0;
}

int cmd_run(const std::string& config_path,
            const std::vector<std::string>& overrides) {
  auto kv = harness::parse_config_file(config_path);
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + o + "'");
    }
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  harness::ExperimentConfig cfg = harness::config_from_map(kv);
  harness::RunResult result = harness::run_experiment(cfg);
  std::printf("method=%s master_seed=%llu\n",
              harness::method_name(cfg.method),
              static_cast<unsigned long long>(cfg.master_seed));
  std::printf("seed success rate: %.4f\n", result.seed_success_rate);
  std::printf("final success  train: %.4f +/- %.4f\n",
              result.final_train.mean, result.final_train.stddev);
  std::printf("           held-out: %.4f +/- %.4f\n",
              result.final_held_out.mean, result.final_held_out.stddev);
  std::printf("        expert-only: %.4f +/- %.4f\n",
              result.final_expert_only.mean, result.final_expert_only.stddev);
  std::printf("cache updates: %d  replacements: %d\n", result.total_updates,
              result.total_replacements);
  if (result.jsd_seed >= 0.0) {
    std::printf("JSD(cache, on-policy) on update-triggered: %.4f -> %.4f\n",
                result.jsd_seed, result.jsd_end);
  }
  std::printf("artifacts: %s\n", result.out_dir.c_str());
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& split,
                 int seeds, int rollouts) {
  harness::ExperimentConfig cfg = harness::config_from_map(
      harness::parse_config_file(run_dir + "/config_resolved.txt"));
  env::ScreenGraph graph = env::load_graph(cfg.graph_file);
  std::vector<env::TaskSpec> tasks = env::load_tasks(cfg.tasks_file, graph);
  std::map<std::string, env::TaskSpec> task_map;
  for (const auto& t : tasks) task_map[t.task_id] = t;

  diag::SplitSpec splits = diag::load_splits(run_dir + "/splits.json");
  const std::vector<std::string>* ids = nullptr;
  if (split == "train") ids = &splits.train_ids;
  else if (split == "held_out") ids = &splits.held_out_ids;
  else if (split == "expert_only") ids = &splits.expert_only_ids;
  else throw ConfigError("unknown split '" + split + "'");

  std::vector<env::TaskSpec> split_tasks;
  for (const auto& id : *ids) split_tasks.push_back(task_map.at(id));

  policy::PolicyParams params =
      policy::load_params(run_dir + "/params_final.txt", graph);
  rollout::EpisodeConfig episode;
  episode.history_k = cfg.history_k;
  harness::EvalResult result = harness::evaluate(
      graph, split_tasks, params, seeds, rollouts,
      derive_seed(cfg.master_seed, "eval"), episode);
  std::printf("%s: %.4f +/- %.4f over %d seeds (%zu tasks)\n", split.c_str(),
              result.mean, result.stddev, seeds, split_tasks.size());
  for (std::size_t i = 0; i < result.per_seed.size(); ++i) {
    std::printf("  seed %zu: %.4f\n", i, result.per_seed[i]);
  }
  return 0;
}

// Tail mass and JSD per trace family, mirroring the distribution-analysis
// summary. The on-policy reference is the first-iteration rollout family.
int cmd_report(const std::string& run_dir, bool csv) {
  harness::ExperimentConfig cfg = harness::config_from_map(
      harness::parse_config_file(run_dir + "/config_resolved.txt"));
  env::ScreenGraph graph = env::load_graph(cfg.graph_file);
  std::vector<env::TaskSpec> tasks = env::load_tasks(cfg.tasks_file, graph);
  std::map<std::string, env::TaskSpec> task_map;
  for (const auto& t : tasks) task_map[t.task_id] = t;
  policy::PolicyParams base =
      policy::load_params(run_dir + "/params_base.txt", graph);

  auto recorded = [](const Trajectory& traj) {
    std::vector<double> probs;
    for (const auto& s : traj.steps) probs.push_back(std::exp(s.logprob));
    return probs;
  };

  std::map<std::string, std::vector<double>> families;

  auto converted = expert::load_converted(run_dir + "/converted.jsonl");
  for (const auto& conv : converted) {
    for (const auto& step : conv.steps) {
      families["converted(base-scored)"].push_back(
          std::exp(policy::logprob(base, step.ctx, step.action)));
    }
  }
  for (const auto& [id, entry] :
       assim::load_cache(run_dir + "/dself.jsonl").entries) {
    auto p = recorded(entry.trajectory);
    families["level1-self-rolled"].insert(
        families["level1-self-rolled"].end(), p.begin(), p.end());
  }
  for (const auto& [id, entry] :
       assim::load_cache(run_dir + "/cache_final.jsonl").entries) {
    auto p = recorded(entry.trajectory);
    families["cache-final"].insert(families["cache-final"].end(), p.begin(),
                                   p.end());
  }
  for (const auto& rec :
       harness::load_traces(run_dir + "/traces_first.jsonl")) {
    if (rec.trajectory.provenance != SlotProvenance::OnPolicy) continue;
    auto p = recorded(rec.trajectory);
    families["on-policy-first"].insert(families["on-policy-first"].end(),
                                       p.begin(), p.end());
  }
  for (const auto& rec :
       harness::load_traces(run_dir + "/traces_last.jsonl")) {
    if (rec.trajectory.provenance != SlotProvenance::OnPolicy) continue;
    auto p = recorded(rec.trajectory);
    families["on-policy-last"].insert(families["on-policy-last"].end(),
                                      p.begin(), p.end());
  }

  auto ref_it = families.find("on-policy-first");
  if (ref_it == families.end() || ref_it->second.empty()) {
    throw IoError("no on-policy reference traces in " + run_dir);
  }
  diag::Histogram ref =
      diag::token_prob_histogram(ref_it->second, cfg.hist_bins);

  if (csv) {
    std::printf("family,steps,tail_mass,jsd_vs_onpolicy_first\n");
  } else {
    std::printf("%-24s %8s %10s %8s\n", "family", "steps", "tail<0.2",
                "JSD");
  }
  for (const auto& [name, probs] : families) {
    if (probs.empty()) continue;
    const double tail = diag::tail_mass(probs, cfg.tail_threshold);
    const double jsd = diag::js_divergence(
        diag::token_prob_histogram(probs, cfg.hist_bins), ref);
    if (csv) {
      std::printf("%s,%zu,%.6f,%.6f\n", name.c_str(), probs.size(), tail,
                  jsd);
    } else {
      std::printf("%-24s %8zu %10.4f %8.4f\n", name.c_str(), probs.size(),
                  tail, jsd);
    }
  }
  return 0;
}

int cmd_replay(const std::string& traces_path, const std::string& params_path,
               const std::string& graph_path, const std::string& tasks_path) {
  env::ScreenGraph graph = env::load_graph(graph_path);
  std::vector<env::TaskSpec> tasks = env::load_tasks(tasks_path, graph);
  std::map<std::string, env::TaskSpec> task_map;
  for (const auto& t : tasks) task_map[t.task_id] = t;
  policy::PolicyParams params = policy::load_params(params_path, graph);
  harness::ReplayReport report = harness::replay_traces(
      harness::load_traces(traces_path), params, graph, task_map);
  std::printf("traces: %d  scored steps: %d  skipped slots: %d\n",
              report.traces, report.scored_steps, report.skipped_slots);
  std::printf("max logprob error: %.3e  env mismatches: %d\n",
              report.max_logprob_error, report.env_mismatches);
  const bool ok =
      report.max_logprob_error <= 1e-9 && report.env_mismatches == 0;
  std::printf("replay %s\n", ok ? "OK" : "FAILED");
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level expert-to-policy assimilation trainer"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-suite",
                                 "Generate a synthetic task suite");
  std::string gen_config, gen_out = "suite";
  std::uint64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "suite config file (key = value)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory");

  auto* run = app.add_subcommand("run", "Run a training experiment");
  std::string run_config;
  std::vector<std::string> run_sets;
  run->add_option("--config", run_config, "experiment config file")
      ->required();
  run->add_option("--set", run_sets, "override config keys (key=value)");

  auto* eval = app.add_subcommand("evaluate",
                                  "Greedy evaluation of a finished run");
  std::string eval_run, eval_split = "held_out";
  int eval_seeds = 3, eval_rollouts = 1;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--split", eval_split, "train|held_out|expert_only");
  eval->add_option("--seeds", eval_seeds, "evaluation seeds");
  eval->add_option("--rollouts", eval_rollouts, "rollouts per task per seed");

  auto* report = app.add_subcommand(
      "report", "Tail-mass and JSD summary per trace family");
  std::string report_run;
  bool report_csv = false;
  report->add_option("--run", report_run, "run directory")->required();
  report->add_flag("--csv", report_csv, "emit CSV instead of a table");

  auto* replay = app.add_subcommand(
      "replay", "Re-score and re-run recorded traces against a snapshot");
  std::string replay_traces, replay_params, replay_graph, replay_tasks;
  replay->add_option("--traces", replay_traces, "trace file")->required();
  replay->add_option("--params", replay_params, "params snapshot")
      ->required();
  replay->add_option("--graph", replay_graph, "graph file")->required();
  replay->add_option("--tasks", replay_tasks, "tasks file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_suite(gen_config, gen_seed, gen_out);
    if (run->parsed()) return cmd_run(run_config, run_sets);
    if (eval->parsed())
      return cmd_evaluate(eval_run, eval_split, eval_seeds, eval_rollouts);
    if (report->parsed()) return cmd_report(report_run, report_csv);
    if (replay->parsed())
      return cmd_replay(replay_traces, replay_params, replay_graph,
                        replay_tasks);
  } catch (const bepa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bepa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
