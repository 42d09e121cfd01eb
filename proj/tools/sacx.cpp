// Command-line entry point: train, eval, oracle-tests, render-dump.

#include "sacx/oracles/checks.hpp"
#include "sacx/orchestrator/config.hpp"
#include "sacx/orchestrator/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>

using namespace sacx;
using namespace sacx::orchestrator;

namespace {

const gated::TaskSpec& find_task(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& t : cfg.tasks)
    if (t.name() == name) return t;
  std::string known;
  for (const auto& t : cfg.tasks) known += " " + t.name();
  throw std::invalid_argument("task '" + name + "' is not in the checkpoint's task set:" + known);
}

int train(const std::string& path, const std::vector<std::uint64_t>& seeds, int episodes, const std::string& mode) {
  auto cfg = parse_config(path);
  if (!seeds.empty()) cfg.seeds = seeds;
  if (episodes >= 0) cfg.episodes = episodes;
  if (mode == "deterministic") cfg.mode = RunMode::deterministic;
  if (mode == "concurrent") cfg.mode = RunMode::concurrent;
  finalize(cfg);
  const auto results = run_experiment(cfg);
  for (const auto& r : results) {
    int caught = 0;
    for (const auto& p : r.curve) caught += p.caught;
    std::printf("seed %llu: %zu env steps, %llu learner steps, %d/%zu evaluations caught, output %s\n",
                static_cast<unsigned long long>(r.seed), r.env_steps, static_cast<unsigned long long>(r.learner_steps),
                caught, r.curve.size(), r.directory.c_str());
  }
  return 0;
}

int eval(const std::string& checkpoint, const std::string& task_name, int episodes, std::uint64_t seed) {
  const auto loaded = load_store(checkpoint);
  const auto& task = find_task(loaded.config, task_name);
  const auto scaling = env::ObservationScaling::for_config(loaded.config.env);
  auto env_cfg = loaded.config.env;
  env_cfg.frame_dump_dir.clear();
  std::mt19937_64 rng(seed);
  std::printf("episode,task,eval_return,catch,first_catch_step\n");
  double total = 0.0;
  int caught = 0;
  for (int e = 0; e < episodes; ++e) {
    const auto r = evaluate(env_cfg, loaded.store.actor, task, scaling, loaded.config.episode_length, rng);
    std::printf("%d,%s,%g,%d,%d\n", e, task.name().c_str(), r.eval_return, r.caught ? 1 : 0, r.first_catch_step);
    total += r.eval_return;
    caught += r.caught;
  }
  std::fprintf(stderr, "mean return %g, catch rate %d/%d\n", total / episodes, caught, episodes);
  return 0;
}

int oracle_tests() {
  const std::vector<oracles::CheckResult> results = {
      oracles::check_layer_gradients(),
      oracles::check_network_gradients(),
      oracles::check_retrace(learner::TraceMode::paper_literal),
      oracles::check_retrace(learner::TraceMode::standard_first_step_one),
      oracles::check_gating_invariance(),
  };
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s %s\n", r.passed ? "PASS" : "FAIL", r.summary().c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int render_dump(const std::string& checkpoint, const std::string& task_name, const std::string& out, int steps,
                std::uint64_t seed) {
  const auto loaded = load_store(checkpoint);
  const auto& task = task_name.empty() ? evaluation_tasks(loaded.config).front() : find_task(loaded.config, task_name);
  auto env_cfg = loaded.config.env;
  env_cfg.frame_dump_dir = out;
  std::mt19937_64 rng(seed);
  const auto r = evaluate(env_cfg, loaded.store.actor, task, env::ObservationScaling::for_config(loaded.config.env),
                          steps, rng);
  std::printf("%s: return %g, catch %d, frames in %s\n", task.name().c_str(), r.eval_return, r.caught ? 1 : 0,
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task ball-in-cup learning with gated state groups"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::string config_path, mode;
  std::vector<std::uint64_t> seeds;
  int episodes = -1;
  auto* train_cmd = app.add_subcommand("train", "run every seed of an experiment config");
  train_cmd->add_option("config", config_path, "experiment YAML file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seeds, "seed(s) replacing the config's list");
  train_cmd->add_option("--episodes", episodes, "episode count replacing the config's");
  train_cmd->add_option("--mode", mode, "deterministic or concurrent")
      ->check(CLI::IsMember({"deterministic", "concurrent"}));

  std::string checkpoint, task_name, out_dir = "frames";
  int eval_episodes = 1, dump_steps = 500;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "noise-free evaluation of one task from a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("task", task_name, "task name such as 5F or 5P")->required();
  eval_cmd->add_option("--episodes", eval_episodes)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed);

  auto* oracle_cmd = app.add_subcommand("oracle-tests", "finite-difference and retrace oracle checks");

  auto* dump_cmd = app.add_subcommand("render-dump", "write the frames of one evaluation episode as PGM files");
  dump_cmd->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--task", task_name, "task to roll out (default: first evaluation task)");
  dump_cmd->add_option("--out", out_dir, "output directory");
  dump_cmd->add_option("--steps", dump_steps)->check(CLI::PositiveNumber);
  dump_cmd->add_option("--seed", eval_seed);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*train_cmd) return train(config_path, seeds, episodes, mode);
    if (*eval_cmd) return eval(checkpoint, task_name, eval_episodes, eval_seed);
    if (*oracle_cmd) return oracle_tests();
    if (*dump_cmd) return render_dump(checkpoint, task_name, out_dir, dump_steps, eval_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
