#pragma once

#include "sacx/env/ball_in_cup.hpp"
#include "sacx/gated/networks.hpp"
#include "sacx/orchestrator/config.hpp"
#include "sacx/replay/replay.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sacx::orchestrator {

using Real = float;  // parameter precision used for training and acting
using Store = gated::ParamStore<Real>;
using ActorNet = gated::GatedNet<Real>;

/// Uniform draw of the next intention among `task_count` tasks.
int schedule_intention(int task_count, std::mt19937_64& rng);

struct EpisodeSettings {
  int length = 500;
  int switch_period = 100;
};

/// One exploratory episode: the scheduled intention acts with its policy
/// filter, every step records the full reward vector of `tasks`.
replay::Trajectory run_episode(env::BallInCup& env, const ActorNet& actor, const std::vector<gated::TaskSpec>& tasks,
                               const env::ObservationScaling& scaling, const EpisodeSettings& settings,
                               std::mt19937_64& rng, std::uint64_t episode_id = 0);

/// Log-probability of `action` under `task`'s policy at `obs`, as recorded during acting.
double behavior_log_prob(const ActorNet& actor, const gated::TaskSpec& task, const env::Observation& obs,
                         const Eigen::VectorXd& action, const env::ObservationScaling& scaling);

struct EvalResult {
  double eval_return = 0.0;   // summed reward of the task's reward id
  bool caught = false;        // any step with the sparse catch reward
  int first_catch_step = -1;  // -1 when never caught
};

/// Noise-free rollout of `task`'s policy mean on a fresh environment.
EvalResult evaluate(const env::BallInCupConfig& env_cfg, const ActorNet& actor, const gated::TaskSpec& task,
                    const env::ObservationScaling& scaling, int episode_length, std::mt19937_64& rng);

struct LearningCurvePoint {
  int episode = 0;  // episodes completed so far, from 1
  std::string task;
  double eval_return = 0.0;
  bool caught = false;
  int first_catch_step = -1;
  std::uint64_t learner_steps = 0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::filesystem::path directory;
  std::vector<LearningCurvePoint> curve;
  std::uint64_t learner_steps = 0;
  std::size_t env_steps = 0;
  Store store;
};

/// Creates freshly initialized networks for the config.
Store make_store(const ExperimentConfig& cfg, std::mt19937_64& rng);

/// Output directory after applying the SACX_OUTPUT_DIR override.
std::filesystem::path output_root(const ExperimentConfig& cfg);

/// Runs one seed, writing curve.csv, metrics.csv, config.yaml and checkpoints
/// under `directory`.
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& directory);

/// Runs every configured seed under output_root(cfg)/seed_<n>.
std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg);

struct LoadedCheckpoint {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  Store store;
};

void save_store(const std::filesystem::path& path, const ExperimentConfig& cfg, std::uint64_t seed, const Store& store);
LoadedCheckpoint load_store(const std::filesystem::path& path);

/// Appends one row per point in the `episode,task,eval_return,catch,first_catch_step,learner_steps,seed` layout.
class CurveCsv {
 public:
  explicit CurveCsv(const std::filesystem::path& path);
  void write(const LearningCurvePoint& p);

 private:
  std::ofstream out_;
};

}  // namespace sacx::orchestrator
