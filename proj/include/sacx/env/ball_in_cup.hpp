#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacx::env {

using Vec2 = Eigen::Vector2d;

inline constexpr int kActionDim = 2;
inline constexpr int kProprioSize = 8;
inline constexpr int kFeatureSize = 8;
inline constexpr int kRewardCount = 8;

/// Geometry, physics and reward coefficients of the planar task. Lengths in
/// metres, times in seconds. The cup frame origin is the centre of the cup
/// base, which is also where the string is anchored.
struct BallInCupConfig {
  double string_length = 0.40;
  double ball_diameter = 0.05;
  double cup_diameter = 0.20;
  double cup_height = 0.16;
  double gravity = 9.81;

  double control_dt = 0.05;
  int substeps = 20;
  double filter_cutoff_hz = 0.5;
  double max_velocity = 2.0;

  Vec2 workspace_min{-0.5, 0.0};
  Vec2 workspace_max{0.5, 0.8};
  Vec2 start_position{0.0, 0.5};
  double reset_perturbation = 0.05;  // rad, uniform

  double near_max_margin = 0.05;  // r3
  double opening_scale = 0.2;     // r4
  double swing_sigma = 0.09;      // r7
  double velocity_penalty = 0.1;  // r8

  int render_size = 32;
  int frame_stack = 3;
  Vec2 camera_center{0.0, 0.45};
  double camera_span = 1.8;

  std::string frame_dump_dir;  // PGM dump of every rendered frame when non-empty

  double ball_radius() const { return 0.5 * ball_diameter; }
  double cup_radius() const { return 0.5 * cup_diameter; }
  double inner_half_width() const { return cup_radius() - ball_radius(); }
  double filter_coefficient() const;
  void validate() const;
};

struct PhysicsState {
  Vec2 cup_position = Vec2::Zero();
  Vec2 cup_velocity = Vec2::Zero();
  Vec2 ball_position = Vec2::Zero();
  Vec2 ball_velocity = Vec2::Zero();
  int step = 0;
  bool ball_in_cup = false;  // entered through the opening and not yet left
};

/// Low-pass filter state, one entry per actuated dimension (unitless command).
struct ActionFilterState {
  Vec2 value = Vec2::Zero();
};

using RewardVector = std::array<double, kRewardCount>;  // index = reward id - 1

using Frame = std::vector<std::uint8_t>;  // row-major, row 0 at the top; value / 255 is the intensity

struct Observation {
  Eigen::VectorXd proprio = Eigen::VectorXd::Zero(kProprioSize);
  Eigen::VectorXd features = Eigen::VectorXd::Zero(kFeatureSize);
  std::vector<std::uint8_t> pixels;  // frame_stack frames, oldest first

  double pixel(std::size_t i) const { return pixels[i] / 255.0; }
  bool operator==(const Observation&) const = default;
};

// Layout of the proprio and feature groups.
namespace proprio {
inline constexpr int cup_position = 0, cup_velocity = 2, previous_action = 4, filter_state = 6;
}
namespace features {
inline constexpr int ball_relative = 0, ball_velocity = 2, cup_position = 4, cup_velocity = 6;
}

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PhysicsState reset_state(const BallInCupConfig& cfg, std::mt19937_64& rng);
/// Reset with an explicit initial swing angle (radians from hanging straight down).
PhysicsState reset_state(const BallInCupConfig& cfg, double angle);

/// First-order low-pass on the clipped raw action. Returns the commanded cup
/// velocity (m/s) and updates the filter state. `clipped` is set when the raw
/// input had to be clipped to [-1, 1].
Vec2 filter_action(const BallInCupConfig& cfg, const Vec2& raw, ActionFilterState& state, bool* clipped = nullptr);

/// Advances one control period with `cfg.substeps` substeps.
PhysicsState step_physics(const BallInCupConfig& cfg, const PhysicsState& state, const Vec2& commanded_velocity);

/// Ball position in the cup frame.
Vec2 ball_in_cup_frame(const PhysicsState& state);

RewardVector compute_rewards(const BallInCupConfig& cfg, const PhysicsState& state, const Vec2& action);

/// Mechanical energy per unit ball mass in the world frame.
double specific_energy(const BallInCupConfig& cfg, const PhysicsState& state);

Frame render(const BallInCupConfig& cfg, const PhysicsState& state);

void write_pgm(const std::filesystem::path& path, const Frame& frame, int size);

/// What `observe` needs from the previous control step.
struct ObservationHistory {
  Vec2 previous_ball = Vec2::Zero();
  Vec2 previous_cup = Vec2::Zero();
  Vec2 previous_action = Vec2::Zero();
  std::deque<Frame> frames;  // oldest first
};

/// Builds the observation for `state` and advances `history`. On the first
/// call after a reset (`history.frames` empty) the frame stack repeats the
/// current frame and finite-difference velocities are zero.
Observation observe(const BallInCupConfig& cfg, const PhysicsState& state, const ActionFilterState& filter,
                    ObservationHistory& history);

struct StepResult {
  Observation observation;
  RewardVector rewards{};
  bool aborted = false;
  std::string diagnostic;
};

/// Stateful wrapper bundling physics, action filter and observation history.
class BallInCup {
 public:
  explicit BallInCup(BallInCupConfig cfg = {});

  Observation reset(std::mt19937_64& rng);
  Observation reset_to(const PhysicsState& state);
  StepResult step(const Vec2& raw_action);

  const BallInCupConfig& config() const { return cfg_; }
  const PhysicsState& state() const { return state_; }
  const ActionFilterState& filter_state() const { return filter_; }
  std::int64_t clipped_actions() const { return clipped_; }

 private:
  Observation finish_observation();

  BallInCupConfig cfg_;
  PhysicsState state_;
  ActionFilterState filter_;
  ObservationHistory history_;
  std::int64_t clipped_ = 0;
  std::int64_t frames_dumped_ = 0;
};

/// Fixed per-dimension affine scaling applied before observations enter a
/// network: scaled = (raw - offset) * scale.
struct ObservationScaling {
  Eigen::VectorXd proprio_offset, proprio_scale;
  Eigen::VectorXd feature_offset, feature_scale;

  static ObservationScaling for_config(const BallInCupConfig& cfg);
};

}  // namespace sacx::env
