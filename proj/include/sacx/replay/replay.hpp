#pragma once

#include "sacx/env/ball_in_cup.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

namespace sacx::replay {

struct Transition {
  env::Observation obs;
  Eigen::VectorXd action;
  double behavior_log_prob = 0.0;  // log b(a|s) under the executing intention
  Eigen::VectorXd rewards;         // one entry per configured task
  int executed_task = 0;
  bool terminal = false;
  std::uint32_t use_count = 0;

  bool operator==(const Transition&) const = default;
};

/// One episode (or an aborted prefix of one). The observation after the last
/// step is kept so that the final transition can be bootstrapped.
struct Trajectory {
  std::uint64_t episode_id = 0;
  std::vector<Transition> steps;
  env::Observation final_observation;
  std::vector<std::size_t> segment_starts;  // step indices where the executing intention was (re)drawn

  std::size_t size() const { return steps.size(); }
  const env::Observation& next_observation(std::size_t i) const {
    return i + 1 < steps.size() ? steps[i + 1].obs : final_observation;
  }
  bool operator==(const Trajectory&) const = default;
};

struct ReplayConfig {
  std::size_t capacity = 100000;  // transitions
  std::uint32_t max_use = 2500;
  std::size_t max_trajectory_length = 500;
  int task_count = 1;
};

/// Throws std::invalid_argument describing the first violated invariant.
void validate(const Trajectory& traj, const ReplayConfig& cfg);

/// A contiguous window copied out of the buffer. `next_observation` is the
/// state after the last step (bootstrap state).
struct Snippet {
  std::uint64_t episode_id = 0;
  std::size_t start = 0;
  std::vector<Transition> steps;
  env::Observation next_observation;

  std::size_t size() const { return steps.size(); }
};

/// FIFO trajectory store with uniform window sampling and max-use retirement.
/// A window of length L is eligible while every transition in it has been
/// served fewer than max_use times. Trajectories left without an eligible
/// window at the sampling length are dropped. Thread-safe for one writer and
/// one reader.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig cfg);

  void append(Trajectory traj);

  /// `batch` windows of `length` steps drawn uniformly (with replacement)
  /// from the eligible ones; empty optional when there are none yet.
  std::optional<std::vector<Snippet>> sample_snippets(std::size_t batch, std::size_t length, std::mt19937_64& rng);

  std::size_t transition_count() const;
  std::size_t trajectory_count() const;
  std::size_t eligible_windows(std::size_t length) const;
  std::uint64_t dropped_trajectories() const;
  const ReplayConfig& config() const { return cfg_; }

  /// Copies of the stored trajectories, oldest first.
  std::vector<Trajectory> snapshot() const;

 private:
  struct Entry {
    Trajectory traj;
    std::vector<std::size_t> exhausted;  // sorted indices with use_count >= max_use
  };

  std::size_t window_count(const Entry& e, std::size_t length) const;
  std::size_t nth_window(const Entry& e, std::size_t length, std::size_t n) const;
  void evict_to_capacity();
  void drop_dead(std::size_t length);

  ReplayConfig cfg_;
  mutable std::mutex mutex_;
  std::deque<Entry> entries_;
  std::size_t transitions_ = 0;
  std::uint64_t dropped_ = 0;
};

/// Append-only binary log: one record per transition plus an end record
/// carrying the final observation of each trajectory.
class EpisodeLogWriter {
 public:
  EpisodeLogWriter(const std::filesystem::path& path, int task_count);
  void write(const Trajectory& traj);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  int task_count_;
};

std::vector<Trajectory> read_episode_log(const std::filesystem::path& path);

}  // namespace sacx::replay
