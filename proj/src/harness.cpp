#include "bepa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bepa/errors.hpp"
#include "bepa/serde.hpp"

namespace bepa::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* method_name(Method m) {
  switch (m) {
    case Method::Bepa: return "bepa";
    case Method::Grpo: return "grpo";
    case Method::TraceReplacement: return "trace-replacement";
    case Method::Luffy: return "luffy";
    case Method::Sft: return "sft";
    case Method::SftThenRl: return "sft-then-rl";
    case Method::RlPlusSft: return "rl-plus-sft";
    case Method::Level1Only: return "level1-only";
    case Method::Level2Only: return "level2-only";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  static const std::map<std::string, Method> table = {
      {"bepa", Method::Bepa},
      {"grpo", Method::Grpo},
      {"trace-replacement", Method::TraceReplacement},
      {"luffy", Method::Luffy},
      {"sft", Method::Sft},
      {"sft-then-rl", Method::SftThenRl},
      {"rl-plus-sft", Method::RlPlusSft},
      {"level1-only", Method::Level1Only},
      {"level2-only", Method::Level2Only},
  };
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown method '" + name + "'");
  return it->second;
}

void ExperimentConfig::validate() const {
  train.validate();
  clip.validate();
  shaping.validate();
  if (graph_file.empty() || tasks_file.empty()) {
    throw ConfigError("graph and tasks files are required");
  }
  if (out_dir.empty()) throw ConfigError("output directory is required");
  if (attempts_per_task < 1) throw ConfigError("attempts_per_task >= 1");
  if (feature_dim < 8) throw ConfigError("feature_dim too small");
  if (history_k < 0) throw ConfigError("history_k must be >= 0");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (eval_seeds < 1) throw ConfigError("eval_seeds must be >= 1");
  if (eval_rollouts_per_task < 1) {
    throw ConfigError("eval_rollouts_per_task must be >= 1");
  }
  if (train.temperature != 1.0) {
    throw ConfigError("training requires sampling temperature 1.0");
  }
  if (hist_bins < 2) throw ConfigError("hist_bins must be >= 2");
  if (update_window < 1) throw ConfigError("update_window must be >= 1");
  if (sft_epochs < 0) throw ConfigError("sft_epochs must be >= 0");
  if (!(sft_lr > 0.0)) throw ConfigError("sft_lr must be > 0");
  if (sft_lambda < 0.0) throw ConfigError("sft_lambda must be >= 0");
}

std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      auto issp = [](unsigned char c) { return std::isspace(c); };
      while (!s.empty() && issp(s.front())) s.erase(s.begin());
      while (!s.empty() && issp(s.back())) s.pop_back();
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ": expected key = value at line " +
                        std::to_string(lineno));
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  }
}

}  // namespace

ExperimentConfig config_from_map(
    const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "method") cfg.method = parse_method(value);
    else if (key == "graph") cfg.graph_file = value;
    else if (key == "tasks") cfg.tasks_file = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "master_seed") cfg.master_seed = to_u64(key, value);
    else if (key == "iterations") cfg.train.iterations = to_int(key, value);
    else if (key == "group_size") cfg.train.group_size = to_int(key, value);
    else if (key == "learning_rate")
      cfg.train.learning_rate = to_double(key, value);
    else if (key == "batch_tasks") cfg.train.batch_tasks = to_int(key, value);
    else if (key == "temperature")
      cfg.train.temperature = to_double(key, value);
    else if (key == "eps_low") cfg.clip.eps_low = to_double(key, value);
    else if (key == "eps_high") cfg.clip.eps_high = to_double(key, value);
    else if (key == "adv_epsilon")
      cfg.clip.adv_epsilon = to_double(key, value);
    else if (key == "gamma") cfg.shaping.gamma = to_double(key, value);
    else if (key == "update_rule")
      cfg.update_rule = assim::parse_update_rule(value);
    else if (key == "attempts_per_task")
      cfg.attempts_per_task = to_int(key, value);
    else if (key == "feature_dim") cfg.feature_dim = to_int(key, value);
    else if (key == "history_k") cfg.history_k = to_int(key, value);
    else if (key == "plan_prior") cfg.plan_prior = to_double(key, value);
    else if (key == "dismiss_prior")
      cfg.dismiss_prior = to_double(key, value);
    else if (key == "train_fraction")
      cfg.train_fraction = to_double(key, value);
    else if (key == "extra_train") cfg.extra_train = to_int(key, value);
    else if (key == "pass_rollouts") cfg.pass_rollouts = to_int(key, value);
    else if (key == "eval_every") cfg.eval_every = to_int(key, value);
    else if (key == "eval_seeds") cfg.eval_seeds = to_int(key, value);
    else if (key == "eval_rollouts_per_task")
      cfg.eval_rollouts_per_task = to_int(key, value);
    else if (key == "parallelism") cfg.parallelism = to_int(key, value);
    else if (key == "cache_snapshot_every")
      cfg.cache_snapshot_every = to_int(key, value);
    else if (key == "sft_epochs") cfg.sft_epochs = to_int(key, value);
    else if (key == "sft_lr") cfg.sft_lr = to_double(key, value);
    else if (key == "sft_lambda") cfg.sft_lambda = to_double(key, value);
    else if (key == "hist_bins") cfg.hist_bins = to_int(key, value);
    else if (key == "update_window") cfg.update_window = to_int(key, value);
    else if (key == "tail_threshold")
      cfg.tail_threshold = to_double(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return cfg;
}

void write_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "method = " << method_name(cfg.method) << "\n"
      << "graph = " << cfg.graph_file << "\n"
      << "tasks = " << cfg.tasks_file << "\n"
      << "out = " << cfg.out_dir << "\n"
      << "master_seed = " << cfg.master_seed << "\n"
      << "iterations = " << cfg.train.iterations << "\n"
      << "group_size = " << cfg.train.group_size << "\n"
      << "learning_rate = " << num(cfg.train.learning_rate) << "\n"
      << "batch_tasks = " << cfg.train.batch_tasks << "\n"
      << "temperature = " << num(cfg.train.temperature) << "\n"
      << "eps_low = " << num(cfg.clip.eps_low) << "\n"
      << "eps_high = " << num(cfg.clip.eps_high) << "\n"
      << "adv_epsilon = " << num(cfg.clip.adv_epsilon) << "\n"
      << "gamma = " << num(cfg.shaping.gamma) << "\n"
      << "update_rule = " << assim::update_rule_name(cfg.update_rule) << "\n"
      << "attempts_per_task = " << cfg.attempts_per_task << "\n"
      << "feature_dim = " << cfg.feature_dim << "\n"
      << "history_k = " << cfg.history_k << "\n"
      << "plan_prior = " << num(cfg.plan_prior) << "\n"
      << "dismiss_prior = " << num(cfg.dismiss_prior) << "\n"
      << "train_fraction = " << num(cfg.train_fraction) << "\n"
      << "extra_train = " << cfg.extra_train << "\n"
      << "pass_rollouts = " << cfg.pass_rollouts << "\n"
      << "eval_every = " << cfg.eval_every << "\n"
      << "eval_seeds = " << cfg.eval_seeds << "\n"
      << "eval_rollouts_per_task = " << cfg.eval_rollouts_per_task << "\n"
      << "parallelism = " << cfg.parallelism << "\n"
      << "cache_snapshot_every = " << cfg.cache_snapshot_every << "\n"
      << "sft_epochs = " << cfg.sft_epochs << "\n"
      << "sft_lr = " << num(cfg.sft_lr) << "\n"
      << "sft_lambda = " << num(cfg.sft_lambda) << "\n"
      << "hist_bins = " << cfg.hist_bins << "\n"
      << "update_window = " << cfg.update_window << "\n"
      << "tail_threshold = " << num(cfg.tail_threshold) << "\n";
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate(const env::ScreenGraph& graph,
                    const std::vector<env::TaskSpec>& tasks,
                    const policy::PolicyParams& params, int seeds,
                    int rollouts_per_task, std::uint64_t master_seed,
                    const rollout::EpisodeConfig& episode) {
  EvalResult result;
  rollout::EpisodeConfig greedy = episode;
  greedy.greedy = true;
  for (int s = 0; s < seeds; ++s) {
    int solved = 0;
    for (const auto& task : tasks) {
      const std::uint64_t task_hash = fnv1a(task.task_id);
      bool ok = false;
      for (int j = 0; j < rollouts_per_task && !ok; ++j) {
        Trajectory traj = rollout::run_episode(
            graph, task, params,
            derive_seed(master_seed, "eval-env",
                        static_cast<std::uint64_t>(s), task_hash,
                        static_cast<std::uint64_t>(j)),
            derive_seed(master_seed, "eval-act",
                        static_cast<std::uint64_t>(s), task_hash,
                        static_cast<std::uint64_t>(j)),
            greedy);
        ok = traj.reward == 1.0;
      }
      if (ok) ++solved;
    }
    result.per_seed.push_back(
        tasks.empty() ? 0.0
                      : static_cast<double>(solved) /
                            static_cast<double>(tasks.size()));
  }
  double mean = 0.0;
  for (double v : result.per_seed) mean += v;
  mean /= static_cast<double>(result.per_seed.size());
  result.mean = mean;
  if (result.per_seed.size() > 1) {
    double acc = 0.0;
    for (double v : result.per_seed) acc += (v - mean) * (v - mean);
    result.stddev =
        std::sqrt(acc / static_cast<double>(result.per_seed.size() - 1));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) throw IoError("cannot write " + path);
  }

  void row(int iteration, const std::string& name, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out_ << iteration << '\t' << name << '\t' << buf << '\n';
  }

  void row(int iteration, const std::string& name, double value,
           const std::string& task) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out_ << iteration << '\t' << name << '\t' << buf << '\t' << task << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

std::vector<double> recorded_probs(const Trajectory& traj) {
  std::vector<double> probs;
  probs.reserve(traj.steps.size());
  for (const auto& step : traj.steps) probs.push_back(std::exp(step.logprob));
  return probs;
}

struct DiagStore {
  std::map<std::string, std::vector<double>> seed_cache_probs;
  std::map<std::string, std::vector<double>> end_cache_probs;
  std::map<std::string, std::vector<double>> first_onpolicy_probs;
  std::map<std::string, std::vector<double>> last_onpolicy_probs;
};

// Pooled JSD between a cache family and an on-policy reference over a task
// subset; -1 when either side is empty.
double pooled_jsd(const std::map<std::string, std::vector<double>>& cache,
                  const std::map<std::string, std::vector<double>>& reference,
                  const std::vector<std::string>& subset, int bins) {
  std::vector<double> cache_pool, ref_pool;
  for (const auto& id : subset) {
    if (auto it = cache.find(id); it != cache.end()) {
      cache_pool.insert(cache_pool.end(), it->second.begin(),
                        it->second.end());
    }
    if (auto it = reference.find(id); it != reference.end()) {
      ref_pool.insert(ref_pool.end(), it->second.begin(), it->second.end());
    }
  }
  if (cache_pool.empty() || ref_pool.empty()) return -1.0;
  return diag::js_divergence(diag::token_prob_histogram(cache_pool, bins),
                             diag::token_prob_histogram(ref_pool, bins));
}

}  // namespace

// ---------------------------------------------------------------------------
// Trace records
// ---------------------------------------------------------------------------

void write_traces(const std::string& path,
                  const std::vector<TraceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& rec : records) {
    json j{{"iteration", rec.iteration}, {"trajectory", rec.trajectory}};
    out << j.dump() << "\n";
  }
}

std::vector<TraceRecord> load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<TraceRecord> records;
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
    TraceRecord rec;
    try {
      rec.iteration = j.at("iteration").get<int>();
      j.at("trajectory").get_to(rec.trajectory);
    } catch (const json::exception& e) {
      throw IoError(path + ": incomplete record at line " +
                    std::to_string(lineno) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

ReplayReport replay_traces(
    const std::vector<TraceRecord>& records,
    const policy::PolicyParams& params, const env::ScreenGraph& graph,
    const std::map<std::string, env::TaskSpec>& tasks) {
  ReplayReport report;
  for (const auto& rec : records) {
    ++report.traces;
    const Trajectory& traj = rec.trajectory;
    if (traj.provenance != SlotProvenance::OnPolicy) {
      ++report.skipped_slots;
      continue;
    }
    auto task_it = tasks.find(traj.task_id);
    if (task_it == tasks.end()) {
      throw ConfigError("trace for unknown task '" + traj.task_id + "'");
    }
    auto [state, obs] = env::reset(graph, task_it->second, traj.env_seed);
    for (const auto& step : traj.steps) {
      const double lp = policy::logprob(params, step.ctx, step.action);
      report.max_logprob_error =
          std::max(report.max_logprob_error, std::abs(lp - step.logprob));
      ++report.scored_steps;
      if (!(obs == step.ctx.obs)) ++report.env_mismatches;
      if (state.done) {
        ++report.env_mismatches;
        break;
      }
      obs = env::step(graph, task_it->second, state, step.action).observation;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (!fs::exists(config.graph_file)) {
    throw ConfigError("graph file not found: " + config.graph_file);
  }
  if (!fs::exists(config.tasks_file)) {
    throw ConfigError("tasks file not found: " + config.tasks_file);
  }
  fs::create_directories(config.out_dir);
  const std::string out = config.out_dir;

  const env::ScreenGraph graph = env::load_graph(config.graph_file);
  const std::vector<env::TaskSpec> tasks =
      env::load_tasks(config.tasks_file, graph);
  std::map<std::string, env::TaskSpec> task_map;
  for (const auto& t : tasks) task_map[t.task_id] = t;

  write_config(out + "/config_resolved.txt", config);

  rollout::EpisodeConfig episode;
  episode.history_k = config.history_k;
  episode.temperature = config.train.temperature;

  policy::PolicyParams params = policy::make_base_params(
      graph, config.feature_dim, config.plan_prior, config.dismiss_prior);
  policy::save_params(out + "/params_base.txt", params);

  // expert sweep and deterministic conversion
  std::vector<expert::ExpertTrace> expert_traces;
  std::vector<expert::ConvertedTrace> converted;
  std::vector<expert::Plan> plans;
  std::set<std::string> expert_solved;
  for (const auto& task : tasks) {
    expert::ExpertTrace trace = expert::solve_expert(task, graph);
    if (trace.success) {
      expert_solved.insert(task.task_id);
      converted.push_back(expert::convert_trace(trace, task, graph,
                                                config.history_k));
      plans.push_back(expert::extract_plan(trace));
    }
    expert_traces.push_back(std::move(trace));
  }
  expert::write_expert_traces(out + "/expert.jsonl", expert_traces);
  expert::write_converted(out + "/converted.jsonl", converted);
  expert::write_plans(out + "/plans.jsonl", plans);

  std::map<std::string, expert::ConvertedTrace> converted_map;
  for (const auto& c : converted) converted_map[c.task_id] = c;

  // LEVEL-1 self-rolled seeding runs for every method: the expert-only
  // split is defined from the self-rolled pool, so all methods need it for
  // comparable evaluation. Only cache seeding below is method-specific.
  assim::SelfRollResult self_rolled = assim::level1_selfroll(
      graph, task_map, expert_traces, params, config.attempts_per_task,
      config.master_seed, episode);
  {
    assim::GuidanceCache dself = assim::init_cache(self_rolled);
    assim::save_cache(out + "/dself.jsonl", dself);
  }

  diag::SplitInputs split_inputs;
  split_inputs.expert_solved = expert_solved;
  for (const auto& [id, _] : self_rolled.seeds) {
    split_inputs.self_rolled.insert(id);
  }
  split_inputs.train_fraction = config.train_fraction;
  split_inputs.extra_train = config.extra_train;
  split_inputs.pass_rollouts = config.pass_rollouts;
  split_inputs.episode = episode;
  diag::SplitSpec splits = diag::build_splits(graph, tasks, params,
                                              split_inputs,
                                              config.master_seed);

  auto tasks_of = [&task_map](const std::vector<std::string>& ids) {
    std::vector<env::TaskSpec> out_tasks;
    for (const auto& id : ids) out_tasks.push_back(task_map.at(id));
    return out_tasks;
  };
  const std::vector<env::TaskSpec> train_tasks = tasks_of(splits.train_ids);
  const std::vector<env::TaskSpec> held_out_tasks =
      tasks_of(splits.held_out_ids);
  const std::vector<env::TaskSpec> expert_only_tasks =
      tasks_of(splits.expert_only_ids);

  // method-specific cache seed
  assim::GuidanceCache cache;
  bool dynamic_updates = false;
  bool injection = false;
  switch (config.method) {
    case Method::Bepa:
      cache = assim::init_cache(self_rolled);
      dynamic_updates = true;
      injection = true;
      break;
    case Method::Level1Only:
      cache = assim::init_cache(self_rolled);
      dynamic_updates = false;
      injection = true;
      break;
    case Method::Level2Only:
      cache = assim::init_cache_from_converted(graph, task_map, converted,
                                               params);
      dynamic_updates = true;
      injection = true;
      break;
    case Method::TraceReplacement:
      cache = assim::init_cache_from_converted(graph, task_map, converted,
                                               params);
      dynamic_updates = false;
      injection = true;
      break;
    default:
      break;  // grpo, luffy, sft variants run cache-less
  }
  assim::save_cache(out + "/cache_seed.jsonl", cache);

  // LUFFY off-policy pool: converted traces as trajectories, reward fixed
  // at build time
  std::map<std::string, Trajectory> luffy_offpolicy;
  if (config.method == Method::Luffy) {
    for (const auto& conv : converted) {
      Trajectory traj = expert::converted_to_trajectory(
          conv, task_map.at(conv.task_id), graph, params);
      if (traj.reward == 1.0) luffy_offpolicy[conv.task_id] = traj;
    }
  }

  MetricsWriter metrics(out + "/metrics.tsv");
  metrics.row(0, "seed_success_rate", self_rolled.seed_success_rate);
  metrics.row(0, "expert_solved", static_cast<double>(expert_solved.size()));
  metrics.row(0, "self_rolled", static_cast<double>(self_rolled.seeds.size()));
  metrics.row(0, "train_tasks", static_cast<double>(splits.train_ids.size()));
  metrics.row(0, "held_out_tasks",
              static_cast<double>(splits.held_out_ids.size()));
  metrics.row(0, "expert_only_tasks",
              static_cast<double>(splits.expert_only_ids.size()));

  RunResult result;
  result.out_dir = out;
  result.seed_success_rate = self_rolled.seed_success_rate;

  DiagStore diag_store;
  for (const auto& [id, entry] : cache.entries) {
    diag_store.seed_cache_probs[id] = recorded_probs(entry.trajectory);
  }
  std::set<std::string> initially_l1_expert_only;
  for (const auto& id : splits.expert_only_ids) {
    if (cache.has(id)) initially_l1_expert_only.insert(id);
  }
  std::set<std::string> onpolicy_solved_tasks;
  std::set<std::string> update_triggered;

  diag::TrainingTrackers trackers(config.update_window);
  std::vector<TraceRecord> first_traces, last_traces;

  auto eval_and_log = [&](int iteration, const policy::PolicyParams& p)
      -> std::array<EvalResult, 3> {
    std::array<EvalResult, 3> evals = {
        evaluate(graph, train_tasks, p, config.eval_seeds,
                 config.eval_rollouts_per_task,
                 derive_seed(config.master_seed, "eval"), episode),
        evaluate(graph, held_out_tasks, p, config.eval_seeds,
                 config.eval_rollouts_per_task,
                 derive_seed(config.master_seed, "eval"), episode),
        evaluate(graph, expert_only_tasks, p, config.eval_seeds,
                 config.eval_rollouts_per_task,
                 derive_seed(config.master_seed, "eval"), episode)};
    const char* names[3] = {"train", "held_out", "expert_only"};
    for (int i = 0; i < 3; ++i) {
      metrics.row(iteration, std::string("eval_") + names[i] + "_mean",
                  evals[i].mean);
      metrics.row(iteration, std::string("eval_") + names[i] + "_std",
                  evals[i].stddev);
    }
    return evals;
  };

  auto sample_batch = [&](int iteration) {
    std::vector<std::string> ids = splits.train_ids;
    Rng rng(derive_seed(config.master_seed, "batch",
                        static_cast<std::uint64_t>(iteration)));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(
                                static_cast<int>(i)))]);
    }
    const std::size_t take = std::min<std::size_t>(
        static_cast<std::size_t>(config.train.batch_tasks), ids.size());
    ids.resize(take);
    std::sort(ids.begin(), ids.end());
    return tasks_of(ids);
  };

  auto record_onpolicy_probs = [&](const std::vector<rl::RolloutGroup>& groups) {
    for (const auto& group : groups) {
      std::vector<double> probs;
      for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
        if (group.provenance[i] != SlotProvenance::OnPolicy) continue;
        auto p = recorded_probs(group.trajectories[i]);
        probs.insert(probs.end(), p.begin(), p.end());
      }
      if (probs.empty()) continue;
      diag_store.first_onpolicy_probs.emplace(group.task_id, probs);
      diag_store.last_onpolicy_probs[group.task_id] = probs;
    }
  };

  // optional SFT pre-phase
  if (config.method == Method::Sft || config.method == Method::SftThenRl) {
    baselines::SftRunResult sft =
        baselines::run_sft(params, converted, config.sft_epochs,
                           config.sft_lr);
    for (std::size_t e = 0; e < sft.epoch_losses.size(); ++e) {
      metrics.row(static_cast<int>(e + 1), "sft_loss", sft.epoch_losses[e]);
    }
    metrics.row(static_cast<int>(sft.epoch_losses.size()), "sft_skipped_steps",
                static_cast<double>(sft.skipped_steps));
    metrics.row(static_cast<int>(sft.epoch_losses.size()), "sft_phase_end",
                1.0);
    params = sft.params;
    policy::save_params(out + "/params_after_sft.txt", params);
  }

  const bool rl_loop =
      config.method != Method::Sft;
  const int iterations = rl_loop ? config.train.iterations : 0;

  assim::IterationConfig itcfg;
  itcfg.train = config.train;
  itcfg.clip = config.clip;
  itcfg.rule = config.update_rule;
  itcfg.dynamic_updates = dynamic_updates;
  itcfg.injection = injection;
  itcfg.parallelism = config.parallelism;
  itcfg.master_seed = config.master_seed;
  itcfg.history_k = config.history_k;
  itcfg.fault = config.fault;
  if (config.method == Method::RlPlusSft) {
    itcfg.sft_traces = &converted_map;
    itcfg.sft_lambda = config.sft_lambda;
  }

  try {
    for (int k = 1; k <= iterations; ++k) {
      const std::vector<env::TaskSpec> batch = sample_batch(k);
      if (k == iterations) {
        policy::save_params(out + "/params_behavior_last.txt", params);
      }

      int replacements = 0, updates = 0, tasks_with_cache = 0;
      double mean_reward = 0.0, mean_entropy = 0.0;
      double succ_lp_on = 0.0, succ_lp_cached = 0.0, objective = 0.0;
      std::vector<std::string> updated_tasks, replaced_tasks;
      std::vector<rl::RolloutGroup>* groups_ptr = nullptr;
      std::vector<rl::RolloutGroup> groups_storage;

      if (config.method == Method::Luffy) {
        baselines::LuffyIterationStats stats = baselines::luffy_iteration(
            graph, batch, params, luffy_offpolicy, itcfg, config.shaping, k);
        mean_reward = stats.mean_reward;
        mean_entropy = stats.mean_entropy;
        objective = stats.objective_value;
        metrics.row(k, "offpolicy_slots",
                    static_cast<double>(stats.offpolicy_slots));
        groups_storage = std::move(stats.groups);
        groups_ptr = &groups_storage;
      } else {
        assim::IterationStats stats =
            assim::bepa_iteration(graph, batch, params, cache, itcfg, k);
        replacements = stats.replacements;
        updates = stats.cache_updates;
        tasks_with_cache = stats.tasks_with_cache;
        mean_reward = stats.mean_reward;
        mean_entropy = stats.mean_entropy;
        succ_lp_on = stats.succ_logprob_onpolicy;
        succ_lp_cached = stats.succ_logprob_cached;
        objective = stats.objective_value;
        updated_tasks = stats.updated_tasks;
        replaced_tasks = stats.replaced_tasks;
        for (const auto& id : stats.succeeded_tasks) {
          onpolicy_solved_tasks.insert(id);
        }
        for (const auto& id : stats.updated_tasks) update_triggered.insert(id);
        groups_storage = std::move(stats.groups);
        groups_ptr = &groups_storage;
      }

      record_onpolicy_probs(*groups_ptr);
      if (k == 1) {
        for (const auto& group : *groups_ptr) {
          for (const auto& traj : group.trajectories) {
            first_traces.push_back({k, traj});
          }
        }
      }
      if (k == iterations) {
        for (const auto& group : *groups_ptr) {
          for (const auto& traj : group.trajectories) {
            last_traces.push_back({k, traj});
          }
        }
      }

      trackers.record_entropy(mean_entropy);
      trackers.record_success_logprob(succ_lp_on, succ_lp_cached);
      trackers.record_cache_update_frequency(updates, tasks_with_cache);

      metrics.row(k, "mean_reward", mean_reward);
      metrics.row(k, "entropy", mean_entropy);
      metrics.row(k, "succ_logprob_onpolicy", succ_lp_on);
      metrics.row(k, "succ_logprob_cached", succ_lp_cached);
      metrics.row(k, "objective", objective);
      metrics.row(k, "replacements", static_cast<double>(replacements));
      metrics.row(k, "cache_updates", static_cast<double>(updates));
      metrics.row(k, "cache_update_freq",
                  trackers.update_frequency().back());
      std::sort(updated_tasks.begin(), updated_tasks.end());
      std::sort(replaced_tasks.begin(), replaced_tasks.end());
      for (const auto& id : replaced_tasks) {
        metrics.row(k, "replacement", 1.0, id);
      }
      for (const auto& id : updated_tasks) {
        metrics.row(k, "cache_update", 1.0, id);
      }

      result.total_updates += updates;
      result.total_replacements += replacements;

      if (config.eval_every > 0 && k % config.eval_every == 0 &&
          k != iterations) {
        eval_and_log(k, params);
      }
      if (config.cache_snapshot_every > 0 &&
          k % config.cache_snapshot_every == 0) {
        assim::save_cache(out + "/cache_checkpoint.jsonl", cache);
        policy::save_params(out + "/params_checkpoint.txt", params);
      }
    }
  } catch (const IoError&) {
    // leave a resumable checkpoint behind before propagating
    assim::save_cache(out + "/cache_checkpoint.jsonl", cache);
    policy::save_params(out + "/params_checkpoint.txt", params);
    throw;
  }

  // final artifacts and summary metrics
  policy::save_params(out + "/params_final.txt", params);
  assim::save_cache(out + "/cache_final.jsonl", cache);
  write_traces(out + "/traces_first.jsonl", first_traces);
  write_traces(out + "/traces_last.jsonl", last_traces);

  for (const auto& [id, entry] : cache.entries) {
    diag_store.end_cache_probs[id] = recorded_probs(entry.trajectory);
  }
  for (const auto& id : update_triggered) {
    if (std::find(splits.expert_only_ids.begin(),
                  splits.expert_only_ids.end(),
                  id) != splits.expert_only_ids.end()) {
      splits.update_triggered_ids.push_back(id);
    }
  }
  std::sort(splits.update_triggered_ids.begin(),
            splits.update_triggered_ids.end());
  diag::save_splits(out + "/splits.json", splits);

  result.jsd_seed =
      pooled_jsd(diag_store.seed_cache_probs, diag_store.first_onpolicy_probs,
                 splits.update_triggered_ids, config.hist_bins);
  result.jsd_end =
      pooled_jsd(diag_store.end_cache_probs, diag_store.last_onpolicy_probs,
                 splits.update_triggered_ids, config.hist_bins);

  for (const auto& id : initially_l1_expert_only) {
    if (!onpolicy_solved_tasks.count(id)) continue;
    ++result.flip_denominator;
    auto it = cache.entries.find(id);
    if (it != cache.entries.end() &&
        it->second.provenance == assim::CacheProvenance::Level2) {
      ++result.flip_numerator;
    }
  }

  const int final_iter = iterations;
  result.final_train = evaluate(graph, train_tasks, params, config.eval_seeds,
                                config.eval_rollouts_per_task,
                                derive_seed(config.master_seed, "eval"),
                                episode);
  result.final_held_out = evaluate(
      graph, held_out_tasks, params, config.eval_seeds,
      config.eval_rollouts_per_task, derive_seed(config.master_seed, "eval"),
      episode);
  result.final_expert_only = evaluate(
      graph, expert_only_tasks, params, config.eval_seeds,
      config.eval_rollouts_per_task, derive_seed(config.master_seed, "eval"),
      episode);
  const char* names[3] = {"train", "held_out", "expert_only"};
  const EvalResult* finals[3] = {&result.final_train, &result.final_held_out,
                                 &result.final_expert_only};
  for (int i = 0; i < 3; ++i) {
    metrics.row(final_iter, std::string("eval_") + names[i] + "_mean",
                finals[i]->mean);
    metrics.row(final_iter, std::string("eval_") + names[i] + "_std",
                finals[i]->stddev);
  }
  metrics.row(final_iter, "total_replacements",
              static_cast<double>(result.total_replacements));
  metrics.row(final_iter, "total_cache_updates",
              static_cast<double>(result.total_updates));
  metrics.row(final_iter, "update_triggered_tasks",
              static_cast<double>(splits.update_triggered_ids.size()));
  metrics.row(final_iter, "jsd_seed_upd", result.jsd_seed);
  metrics.row(final_iter, "jsd_end_upd", result.jsd_end);
  metrics.row(final_iter, "flip_denominator",
              static_cast<double>(result.flip_denominator));
  metrics.row(final_iter, "flip_numerator",
              static_cast<double>(result.flip_numerator));
  metrics.flush();

  result.splits = splits;
  return result;
}

}  // namespace bepa::harness
