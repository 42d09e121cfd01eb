#include "sacx/orchestrator/experiment.hpp"

#include "sacx/learner/learner.hpp"
#include "sacx/nn/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

namespace sacx::orchestrator {

using gated::TaskSpec;

int schedule_intention(int task_count, std::mt19937_64& rng) {
  if (task_count <= 0) throw std::invalid_argument("cannot schedule from an empty task set");
  return std::uniform_int_distribution<int>(0, task_count - 1)(rng);
}

namespace {

gated::GaussianPolicyParams<Real> policy_at(const ActorNet& actor, const TaskSpec& task, const env::Observation& obs,
                                            const env::ObservationScaling& scaling) {
  auto batch = gated::make_batch<Real>(obs, scaling, actor.arch->shapes(), task.policy_filter);
  return gated::actor_forward(actor, batch, task);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

replay::Trajectory run_episode(env::BallInCup& env, const ActorNet& actor, const std::vector<TaskSpec>& tasks,
                               const env::ObservationScaling& scaling, const EpisodeSettings& settings,
                               std::mt19937_64& rng, std::uint64_t episode_id) {
  const int k = static_cast<int>(tasks.size());
  const Eigen::Index dim = actor.arch->shapes().action_dim;
  std::normal_distribution<double> normal;

  replay::Trajectory traj;
  traj.episode_id = episode_id;
  traj.steps.reserve(static_cast<std::size_t>(settings.length));
  env::Observation obs = env.reset(rng);
  int task = 0;
  for (int step = 0; step < settings.length; ++step) {
    if (step % settings.switch_period == 0) {
      task = schedule_intention(k, rng);
      traj.segment_starts.push_back(static_cast<std::size_t>(step));
    }
    const auto policy = policy_at(actor, tasks[task], obs, scaling);
    Matrix<Real> noise(dim, 1);
    for (Eigen::Index i = 0; i < dim; ++i) noise(i, 0) = static_cast<Real>(normal(rng));
    const Matrix<Real> action = gated::sample_action(policy, noise);

    replay::Transition tr;
    tr.action = action.col(0).cast<double>();
    tr.behavior_log_prob = static_cast<double>(gated::log_prob(policy, action)(0));
    tr.executed_task = task;

    auto result = env.step(env::Vec2(tr.action(0), tr.action(1)));
    tr.rewards.resize(k);
    for (int t = 0; t < k; ++t) tr.rewards(t) = result.rewards[static_cast<std::size_t>(tasks[t].reward_id - 1)];
    tr.terminal = result.aborted;
    tr.obs = std::move(obs);
    traj.steps.push_back(std::move(tr));
    obs = std::move(result.observation);
    if (result.aborted) {
      spdlog::warn("episode {} aborted at step {}: {}", episode_id, step, result.diagnostic);
      break;
    }
  }
  traj.final_observation = std::move(obs);
  return traj;
}

double behavior_log_prob(const ActorNet& actor, const TaskSpec& task, const env::Observation& obs,
                         const Eigen::VectorXd& action, const env::ObservationScaling& scaling) {
  const auto policy = policy_at(actor, task, obs, scaling);
  const Matrix<Real> a = action.cast<Real>();
  return static_cast<double>(gated::log_prob(policy, a)(0));
}

EvalResult evaluate(const env::BallInCupConfig& env_cfg, const ActorNet& actor, const TaskSpec& task,
                    const env::ObservationScaling& scaling, int episode_length, std::mt19937_64& rng) {
  env::BallInCup env(env_cfg);
  env::Observation obs = env.reset(rng);
  EvalResult out;
  constexpr std::size_t catch_index = 4;  // reward 5, ball inside the cup
  for (int step = 0; step < episode_length; ++step) {
    const auto policy = policy_at(actor, task, obs, scaling);
    auto result = env.step(env::Vec2(policy.mean(0, 0), policy.mean(1, 0)));
    out.eval_return += result.rewards[static_cast<std::size_t>(task.reward_id - 1)];
    if (result.rewards[catch_index] >= 1.0 && !out.caught) {
      out.caught = true;
      out.first_catch_step = step;
    }
    if (result.aborted) break;
    obs = std::move(result.observation);
  }
  return out;
}

Store make_store(const ExperimentConfig& cfg, std::mt19937_64& rng) {
  const int k = static_cast<int>(cfg.tasks.size());
  const auto shapes = input_shapes(cfg);
  auto actor = std::make_shared<const gated::Architecture>(gated::Role::actor, shapes, cfg.network, k);
  auto critic = std::make_shared<const gated::Architecture>(gated::Role::critic, shapes, cfg.network, k);
  Store store = Store::create(actor, critic, rng);
  store.sync_period = cfg.target_sync_period;
  return store;
}

std::filesystem::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("SACX_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

void save_store(const std::filesystem::path& path, const ExperimentConfig& cfg, std::uint64_t seed, const Store& store) {
  ExperimentConfig one = cfg;
  one.seeds = {seed};
  nn::Checkpoint<Real> ckpt;
  ckpt.metadata = serialize(one);
  ckpt.add("actor", store.actor.params);
  ckpt.add("critic", store.critic.params);
  ckpt.add("target_actor", store.target_actor.params);
  ckpt.add("target_critic", store.target_critic.params);
  const auto tmp = path.string() + ".tmp";
  nn::save_checkpoint(tmp, ckpt);
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_store(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint<Real>(path);
  LoadedCheckpoint out;
  out.config = parse_config_string(ckpt.metadata, path.string() + " (metadata)");
  out.seed = out.config.seeds.front();
  std::mt19937_64 rng(0);
  out.store = make_store(out.config, rng);
  ckpt.restore("actor", out.store.actor.params);
  ckpt.restore("critic", out.store.critic.params);
  ckpt.restore("target_actor", out.store.target_actor.params);
  ckpt.restore("target_critic", out.store.target_critic.params);
  return out;
}

CurveCsv::CurveCsv(const std::filesystem::path& path) {
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open " + path.string());
  out_ << "episode,task,eval_return,catch,first_catch_step,learner_steps,seed\n";
}

void CurveCsv::write(const LearningCurvePoint& p) {
  out_ << p.episode << ',' << p.task << ',' << p.eval_return << ',' << (p.caught ? 1 : 0) << ',' << p.first_catch_step
       << ',' << p.learner_steps << ',' << p.seed << '\n';
  out_.flush();
}

namespace {

/// Everything one seed needs, shared by both execution modes.
struct SeedRun {
  const ExperimentConfig& cfg;
  std::uint64_t seed;
  std::filesystem::path dir;
  env::ObservationScaling scaling;
  env::BallInCupConfig eval_env;
  std::vector<TaskSpec> eval_tasks;
  EpisodeSettings settings;
  std::mt19937_64 actor_rng;
  std::mt19937_64 eval_rng;
  CurveCsv curve_csv;
  std::optional<learner::MetricsCsv> metrics_csv;
  std::optional<replay::EpisodeLogWriter> episode_log;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  SeedResult result;

  SeedRun(const ExperimentConfig& c, std::uint64_t s, std::filesystem::path d)
      : cfg(c),
        seed(s),
        dir(std::move(d)),
        scaling(env::ObservationScaling::for_config(c.env)),
        eval_env(c.env),
        eval_tasks(evaluation_tasks(c)),
        settings{c.episode_length, c.switch_period},
        actor_rng(derive_seed(s, 1)),
        eval_rng(derive_seed(s, 2)),
        curve_csv((std::filesystem::create_directories(dir), dir / "curve.csv")) {
    eval_env.frame_dump_dir.clear();
    if (cfg.metrics_every > 0) metrics_csv.emplace(dir / "metrics.csv");
    if (cfg.write_episode_log) episode_log.emplace(dir / "episodes.log", static_cast<int>(cfg.tasks.size()));
    ExperimentConfig one = cfg;
    one.seeds = {seed};
    std::ofstream(dir / "config.yaml") << serialize(one);
    result.seed = seed;
    result.directory = dir;
  }

  std::uint64_t learner_budget(std::size_t env_steps) const {
    return static_cast<std::uint64_t>(cfg.learner_steps_per_env_step * static_cast<double>(env_steps));
  }

  void record_metrics(const learner::LearnerMetrics& m) {
    if (metrics_csv && !m.waited && m.step % static_cast<std::uint64_t>(cfg.metrics_every) == 0) metrics_csv->write(m);
  }

  void log_episode(const replay::Trajectory& traj) {
    if (episode_log) episode_log->write(traj);
    result.env_steps += traj.size();
  }

  void after_episode(int episode, const Store& store, std::uint64_t learner_steps) {
    if (cfg.eval_every > 0 && episode % cfg.eval_every == 0) {
      for (const auto& task : eval_tasks) {
        const auto r = evaluate(eval_env, store.actor, task, scaling, cfg.episode_length, eval_rng);
        LearningCurvePoint p;
        p.episode = episode;
        p.task = task.name();
        p.eval_return = r.eval_return;
        p.caught = r.caught;
        p.first_catch_step = r.first_catch_step;
        p.learner_steps = learner_steps;
        p.seed = seed;
        p.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        curve_csv.write(p);
        result.curve.push_back(p);
        spdlog::info("seed {} episode {} {}: return {:.2f} catch {} learner steps {}", seed, episode, p.task,
                     p.eval_return, p.caught, learner_steps);
      }
    }
    if (cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0)
      save_store(dir / ("checkpoint_ep" + std::to_string(episode) + ".ckpt"), cfg, seed, store);
  }

  void finish(Store store, std::uint64_t learner_steps) {
    save_store(dir / "checkpoint_final.ckpt", cfg, seed, store);
    result.learner_steps = learner_steps;
    result.store = std::move(store);
  }
};

void run_deterministic(SeedRun& run, Store store) {
  const auto& cfg = run.cfg;
  replay::ReplayBuffer buffer(cfg.replay);
  learner::Learner<Real> learner(cfg.tasks, cfg.learner, run.scaling, derive_seed(run.seed, 3));
  env::BallInCup env(cfg.env);
  std::uint64_t attempts = 0;
  for (int ep = 1; ep <= cfg.episodes; ++ep) {
    auto traj = run_episode(env, store.actor, cfg.tasks, run.scaling, run.settings, run.actor_rng,
                            static_cast<std::uint64_t>(ep - 1));
    run.log_episode(traj);
    buffer.append(std::move(traj));
    for (const auto budget = run.learner_budget(run.result.env_steps); attempts < budget; ++attempts)
      run.record_metrics(learner.step(buffer, store));
    run.after_episode(ep, store, learner.steps());
  }
  run.finish(std::move(store), learner.steps());
}

void run_concurrent(SeedRun& run, Store store) {
  const auto& cfg = run.cfg;
  replay::ReplayBuffer buffer(cfg.replay);
  learner::Learner<Real> learner(cfg.tasks, cfg.learner, run.scaling, derive_seed(run.seed, 3));

  struct Snapshot {
    Store store;
    std::uint64_t learner_steps = 0;
  };
  std::mutex mu;
  std::condition_variable cv;
  auto published = std::make_shared<const Snapshot>(Snapshot{store, 0});
  std::uint64_t budget = 0, attempts = 0;
  bool actor_done = false, failed = false;
  std::exception_ptr learner_error;

  std::thread learner_thread([&] {
    try {
      for (;;) {
        {
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return attempts < budget || actor_done; });
          if (attempts >= budget) break;
        }
        const auto m = learner.step(buffer, store);
        run.record_metrics(m);
        std::shared_ptr<const Snapshot> snap;
        if (!m.waited && m.step % static_cast<std::uint64_t>(cfg.publish_every) == 0)
          snap = std::make_shared<const Snapshot>(Snapshot{store, m.step});
        std::lock_guard lock(mu);
        ++attempts;
        if (snap) published = std::move(snap);
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu);
      learner_error = std::current_exception();
      failed = true;
      cv.notify_all();
    }
  });

  auto current = [&] {
    std::lock_guard lock(mu);
    return published;
  };
  try {
    env::BallInCup env(cfg.env);
    std::uint64_t previous_budget = 0;
    for (int ep = 1; ep <= cfg.episodes; ++ep) {
      std::shared_ptr<const Snapshot> snap;
      {
        // the actor may run at most one episode ahead of the learner's budget
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return attempts >= previous_budget || failed; });
        if (failed) break;
        snap = published;
      }
      auto traj = run_episode(env, snap->store.actor, cfg.tasks, run.scaling, run.settings, run.actor_rng,
                              static_cast<std::uint64_t>(ep - 1));
      run.log_episode(traj);
      buffer.append(std::move(traj));
      {
        std::lock_guard lock(mu);
        previous_budget = budget;
        budget = run.learner_budget(run.result.env_steps);
        cv.notify_all();
      }
      auto latest = current();
      run.after_episode(ep, latest->store, latest->learner_steps);
    }
  } catch (...) {
    {
      std::lock_guard lock(mu);
      actor_done = true;
      budget = attempts;
      cv.notify_all();
    }
    learner_thread.join();
    throw;
  }
  {
    std::lock_guard lock(mu);
    actor_done = true;
    cv.notify_all();
  }
  learner_thread.join();
  if (learner_error) std::rethrow_exception(learner_error);
  run.finish(std::move(store), learner.steps());
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& directory) {
  SeedRun run(cfg, seed, directory);
  std::mt19937_64 init_rng(derive_seed(seed, 0));
  Store store = make_store(cfg, init_rng);
  spdlog::info("seed {}: arm {} with {} tasks, {} episodes, {} mode", seed, cfg.arm, cfg.tasks.size(), cfg.episodes,
               to_string(cfg.mode));
  if (cfg.mode == RunMode::deterministic)
    run_deterministic(run, std::move(store));
  else
    run_concurrent(run, std::move(store));
  return std::move(run.result);
}

std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg) {
  const auto root = output_root(cfg);
  std::vector<SeedResult> out;
  for (auto seed : cfg.seeds) out.push_back(run_seed(cfg, seed, root / ("seed_" + std::to_string(seed))));
  return out;
}

}  // namespace sacx::orchestrator
