#pragma once

#include "sacx/env/ball_in_cup.hpp"
#include "sacx/gated/architecture.hpp"
#include "sacx/gated/task.hpp"
#include "sacx/learner/learner.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacx::orchestrator {

enum class RunMode { concurrent, deterministic };

std::string to_string(RunMode m);

/// Named task sets. `custom` takes its tasks from the config file.
inline const std::vector<std::string> kArms = {"features_only",       "pixels_only",       "mixed", "mixed_asymmetric",
                                               "features_distractor", "shaped_asymmetric", "custom"};

struct ExperimentConfig {
  std::string arm = "features_only";
  std::vector<gated::TaskSpec> tasks;
  bool asymmetric = false;  // every critic sees proprio + features, never the image

  int episode_length = 500;
  int switch_period = 100;
  double control_rate_hz = 20.0;
  double learner_steps_per_env_step = 1.0;
  int episodes = 100;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";
  RunMode mode = RunMode::concurrent;
  int eval_every = 1;
  std::vector<std::string> eval_tasks;  // empty: 5F and/or 5P, whichever the task set has
  int checkpoint_every = 0;             // episodes; 0 = only at the end
  int metrics_every = 100;              // learner steps between metrics rows; 0 disables
  int publish_every = 10;               // learner steps between actor snapshots (concurrent mode)
  bool write_episode_log = false;

  replay::ReplayConfig replay;  // task_count is filled in from the task set
  learner::LearnerConfig learner;
  std::uint64_t target_sync_period = 1000;
  gated::NetworkSizes network;
  env::BallInCupConfig env;

  bool operator==(const ExperimentConfig&) const;
};

/// Error carrying the source position of the offending YAML node.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, int column, const std::string& what);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// Tasks of a named arm; throws for "custom" or unknown names.
std::vector<gated::TaskSpec> arm_tasks(const std::string& arm);

/// Fills derived fields (tasks from the arm, asymmetric critic filters,
/// replay task count) and checks every invariant. Throws std::invalid_argument.
void finalize(ExperimentConfig& cfg);

ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_string(const std::string& text, const std::string& source = "<config>");
std::string serialize(const ExperimentConfig& cfg);

/// Evaluation tasks resolved against the task set.
std::vector<gated::TaskSpec> evaluation_tasks(const ExperimentConfig& cfg);

/// Network input sizes implied by the environment block.
gated::InputShapes input_shapes(const ExperimentConfig& cfg);

}  // namespace sacx::orchestrator
