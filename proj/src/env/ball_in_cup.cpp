#include "sacx/env/ball_in_cup.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace sacx::env {

double BallInCupConfig::filter_coefficient() const {
  const double tau = 1.0 / (2.0 * std::numbers::pi * filter_cutoff_hz);
  return control_dt / (tau + control_dt);
}

void BallInCupConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("ball-in-cup config: " + what);
  };
  require(string_length > 0.0, "string_length must be positive");
  require(ball_diameter > 0.0 && cup_diameter > ball_diameter, "cup must be wider than the ball");
  require(cup_height > 0.0, "cup_height must be positive");
  require(gravity > 0.0, "gravity must be positive");
  require(control_dt > 0.0 && substeps > 0, "control_dt and substeps must be positive");
  require(filter_cutoff_hz > 0.0, "filter_cutoff_hz must be positive");
  require(max_velocity > 0.0, "max_velocity must be positive");
  require((workspace_max.array() > workspace_min.array()).all(), "workspace box is empty");
  require((start_position.array() >= workspace_min.array()).all() &&
              (start_position.array() <= workspace_max.array()).all(),
          "start_position outside the workspace");
  require(reset_perturbation >= 0.0, "reset_perturbation must be non-negative");
  require(opening_scale > 0.0 && swing_sigma > 0.0, "reward scales must be positive");
  require(render_size >= 4 && frame_stack >= 1, "render_size >= 4 and frame_stack >= 1 required");
  require(camera_span > 0.0, "camera_span must be positive");
}

PhysicsState reset_state(const BallInCupConfig& cfg, double angle) {
  PhysicsState s;
  s.cup_position = cfg.start_position;
  s.ball_position = cfg.start_position + cfg.string_length * Vec2(std::sin(angle), -std::cos(angle));
  return s;
}

PhysicsState reset_state(const BallInCupConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-cfg.reset_perturbation, cfg.reset_perturbation);
  return reset_state(cfg, cfg.reset_perturbation > 0.0 ? angle(rng) : 0.0);
}

Vec2 filter_action(const BallInCupConfig& cfg, const Vec2& raw, ActionFilterState& state, bool* clipped) {
  const Vec2 u = raw.cwiseMax(-1.0).cwiseMin(1.0);
  if (clipped) *clipped = (u != raw);
  const double beta = cfg.filter_coefficient();
  state.value += beta * (u - state.value);
  return cfg.max_velocity * state.value;
}

namespace {

// Cup-interior contact, applied in the cup frame. Only an interior entered
// through the opening is solid; the outside of the cup is a ghost except that
// the ball cannot slip into the interior through the base or the walls.
void resolve_cup_contact(const BallInCupConfig& cfg, const Vec2& before, Vec2& r, Vec2& u, bool& in_cup) {
  const double w = cfg.inner_half_width(), h = cfg.cup_height, rb = cfg.ball_radius();
  if (in_cup) {
    if (r.y() >= h) {
      in_cup = false;
      return;
    }
    const double wall = std::nextafter(w, 0.0);
    if (std::abs(r.x()) > wall) {
      r.x() = std::copysign(wall, r.x());
      if (u.x() * r.x() > 0.0) u.x() = 0.0;
    }
    if (r.y() < rb) {
      r.y() = rb;
      if (u.y() < 0.0) u.y() = 0.0;
    }
    return;
  }
  const bool inside = std::abs(r.x()) < w && r.y() > 0.0 && r.y() < h;
  if (!inside) return;
  if (before.y() >= h) {
    in_cup = true;
    if (r.y() < rb) {
      r.y() = rb;
      if (u.y() < 0.0) u.y() = 0.0;
    }
  } else if (before.y() <= 0.0) {
    r.y() = 0.0;
    if (u.y() > 0.0) u.y() = 0.0;
  } else {
    r.x() = std::copysign(w, before.x());
    if (u.x() * before.x() < 0.0) u.x() = 0.0;
  }
}

}  // namespace

PhysicsState step_physics(const BallInCupConfig& cfg, const PhysicsState& state, const Vec2& commanded_velocity) {
  PhysicsState s = state;
  const double dt = cfg.control_dt / cfg.substeps;
  const double g = cfg.gravity, len = cfg.string_length;
  const Vec2 gvec(0.0, -g);
  for (int k = 0; k < cfg.substeps; ++k) {
    // Kinematic cup: follows the command, clamped to the workspace box.
    const Vec2 cup_before = s.cup_position;
    Vec2 cup = cup_before + commanded_velocity * dt;
    Vec2 cup_velocity = commanded_velocity;
    for (int a = 0; a < 2; ++a) {
      if (cup[a] < cfg.workspace_min[a] || cup[a] > cfg.workspace_max[a]) {
        cup[a] = std::clamp(cup[a], cfg.workspace_min[a], cfg.workspace_max[a]);
        cup_velocity[a] = 0.0;
      }
    }
    const Vec2 anchor_velocity = (cup - cup_before) / dt;

    // Ball in the anchor's inertial frame for this substep.
    const Vec2 r0 = s.ball_position - cup_before;
    const Vec2 u0 = s.ball_velocity - anchor_velocity;
    const double energy_before = 0.5 * u0.squaredNorm() + g * r0.y();
    Vec2 r = r0 + u0 * dt + 0.5 * gvec * dt * dt;
    Vec2 u = u0 + gvec * dt;

    bool constrained = false;
    const double dist = r.norm();
    if (dist > len) {
      const Vec2 n = r / dist;
      r = len * n;
      const double radial = n.dot(u);
      if (radial > 0.0) u -= radial * n;
      constrained = true;
    }
    const bool was_in_cup = s.ball_in_cup;
    resolve_cup_contact(cfg, r0, r, u, s.ball_in_cup);
    constrained = constrained || was_in_cup || s.ball_in_cup;

    // The string and the cup can only remove energy in this frame.
    if (constrained) {
      const double kinetic = 0.5 * u.squaredNorm();
      const double budget = energy_before - g * r.y();
      if (kinetic > budget) u *= budget > 0.0 ? std::sqrt(budget / kinetic) : 0.0;
    }

    s.cup_position = cup;
    s.cup_velocity = cup_velocity;
    s.ball_position = cup + r;
    s.ball_velocity = anchor_velocity + u;
  }
  ++s.step;
  if (!s.cup_position.allFinite() || !s.ball_position.allFinite() || !s.ball_velocity.allFinite())
    throw SimulationError("non-finite physics state at step " + std::to_string(s.step));
  return s;
}

Vec2 ball_in_cup_frame(const PhysicsState& state) { return state.ball_position - state.cup_position; }

RewardVector compute_rewards(const BallInCupConfig& cfg, const PhysicsState& state, const Vec2& /*action*/) {
  const Vec2 b = ball_in_cup_frame(state);
  const double x = b.x(), z = b.y(), h = cfg.cup_height;
  const double sigma2 = cfg.swing_sigma * cfg.swing_sigma;
  RewardVector r{};
  r[0] = z > 0.0 ? 1.0 : 0.0;
  r[1] = z > h ? 1.0 : 0.0;
  r[2] = z > cfg.string_length - cfg.near_max_margin ? 1.0 : 0.0;
  r[3] = 1.0 - std::tanh(Vec2(x, z - h).norm() / cfg.opening_scale);
  r[4] = (std::abs(x) < cfg.inner_half_width() && z > 0.0 && z < h) ? 1.0 : 0.0;
  r[5] = (1.0 + std::tanh(7.5 * z)) / 2.0;
  // The planar task has no y axis, so the Gaussian is evaluated at y = 0.
  r[6] = z < 0.0 ? 0.0 : std::exp(-(x * x) / (2.0 * sigma2)) / (2.0 * std::numbers::pi * sigma2);
  r[7] = -cfg.velocity_penalty * state.cup_velocity.lpNorm<1>();
  return r;
}

double specific_energy(const BallInCupConfig& cfg, const PhysicsState& state) {
  return 0.5 * state.ball_velocity.squaredNorm() + cfg.gravity * state.ball_position.y();
}

namespace {

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

constexpr std::uint8_t kCupLevel = 128;
constexpr std::uint8_t kBallLevel = 255;

}  // namespace

Frame render(const BallInCupConfig& cfg, const PhysicsState& state) {
  const int n = cfg.render_size;
  const double px = cfg.camera_span / n;
  const double x0 = cfg.camera_center.x() - 0.5 * cfg.camera_span;
  const double z1 = cfg.camera_center.y() + 0.5 * cfg.camera_span;
  Frame frame(static_cast<std::size_t>(n * n), 0);

  const Vec2 c = state.cup_position;
  const double R = cfg.cup_radius(), h = cfg.cup_height;
  const std::array<std::pair<Vec2, Vec2>, 3> cup = {{{c + Vec2(-R, 0), c + Vec2(-R, h)},
                                                     {c + Vec2(R, 0), c + Vec2(R, h)},
                                                     {c + Vec2(-R, 0), c + Vec2(R, 0)}}};
  const Vec2 ball = state.ball_position;
  const double rb = cfg.ball_radius();
  bool ball_drawn = false;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      const Vec2 p(x0 + (col + 0.5) * px, z1 - (row + 0.5) * px);
      auto& pixel = frame[static_cast<std::size_t>(row * n + col)];
      if ((p - ball).norm() <= rb) {
        pixel = kBallLevel;
        ball_drawn = true;
        continue;
      }
      for (const auto& [a, b] : cup) {
        if (segment_distance(p, a, b) <= 0.5 * px) {
          pixel = kCupLevel;
          break;
        }
      }
    }
  }
  // Minimum footprint: a ball whose centre is in view always lights its pixel.
  if (!ball_drawn) {
    const int col = static_cast<int>(std::floor((ball.x() - x0) / px));
    const int row = static_cast<int>(std::floor((z1 - ball.y()) / px));
    if (col >= 0 && col < n && row >= 0 && row < n) frame[static_cast<std::size_t>(row * n + col)] = kBallLevel;
  }
  return frame;
}

void write_pgm(const std::filesystem::path& path, const Frame& frame, int size) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << size << " " << size << "\n255\n";
  os.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
}

Observation observe(const BallInCupConfig& cfg, const PhysicsState& state, const ActionFilterState& filter,
                    ObservationHistory& history) {
  Frame frame = render(cfg, state);
  if (history.frames.empty()) {
    history.frames.assign(static_cast<std::size_t>(cfg.frame_stack), frame);
    history.previous_ball = state.ball_position;
    history.previous_cup = state.cup_position;
  } else {
    history.frames.push_back(std::move(frame));
    while (history.frames.size() > static_cast<std::size_t>(cfg.frame_stack)) history.frames.pop_front();
  }

  Observation obs;
  obs.proprio.segment<2>(proprio::cup_position) = state.cup_position;
  obs.proprio.segment<2>(proprio::cup_velocity) = state.cup_velocity;
  obs.proprio.segment<2>(proprio::previous_action) = history.previous_action;
  obs.proprio.segment<2>(proprio::filter_state) = filter.value;

  obs.features.segment<2>(features::ball_relative) = ball_in_cup_frame(state);
  obs.features.segment<2>(features::ball_velocity) = (state.ball_position - history.previous_ball) / cfg.control_dt;
  obs.features.segment<2>(features::cup_position) = state.cup_position;
  obs.features.segment<2>(features::cup_velocity) = (state.cup_position - history.previous_cup) / cfg.control_dt;

  obs.pixels.reserve(history.frames.size() * history.frames.front().size());
  for (const auto& f : history.frames) obs.pixels.insert(obs.pixels.end(), f.begin(), f.end());

  history.previous_ball = state.ball_position;
  history.previous_cup = state.cup_position;
  return obs;
}

BallInCup::BallInCup(BallInCupConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!cfg_.frame_dump_dir.empty()) std::filesystem::create_directories(cfg_.frame_dump_dir);
}

Observation BallInCup::finish_observation() {
  Observation obs = observe(cfg_, state_, filter_, history_);
  if (!cfg_.frame_dump_dir.empty()) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06lld.pgm", static_cast<long long>(frames_dumped_++));
    write_pgm(std::filesystem::path(cfg_.frame_dump_dir) / name, history_.frames.back(), cfg_.render_size);
  }
  return obs;
}

Observation BallInCup::reset(std::mt19937_64& rng) { return reset_to(reset_state(cfg_, rng)); }

Observation BallInCup::reset_to(const PhysicsState& state) {
  state_ = state;
  filter_ = {};
  history_ = {};
  return finish_observation();
}

StepResult BallInCup::step(const Vec2& raw_action) {
  StepResult result;
  bool clipped = false;
  const Vec2 command = filter_action(cfg_, raw_action, filter_, &clipped);
  if (clipped) {
    ++clipped_;
    spdlog::debug("action ({}, {}) clipped to [-1, 1]", raw_action.x(), raw_action.y());
  }
  try {
    state_ = step_physics(cfg_, state_, command);
  } catch (const SimulationError& e) {
    result.aborted = true;
    result.diagnostic = e.what();
    spdlog::error("episode aborted: {}", e.what());
  }
  result.rewards = compute_rewards(cfg_, state_, raw_action);
  history_.previous_action = raw_action;
  result.observation = finish_observation();
  return result;
}

ObservationScaling ObservationScaling::for_config(const BallInCupConfig& cfg) {
  ObservationScaling s;
  const Vec2 centre = 0.5 * (cfg.workspace_min + cfg.workspace_max);
  const Vec2 half = 0.5 * (cfg.workspace_max - cfg.workspace_min);
  s.proprio_offset = Eigen::VectorXd::Zero(kProprioSize);
  s.proprio_scale = Eigen::VectorXd::Ones(kProprioSize);
  s.proprio_offset.segment<2>(proprio::cup_position) = centre;
  s.proprio_scale.segment<2>(proprio::cup_position) = half.cwiseInverse();
  s.proprio_scale.segment<2>(proprio::cup_velocity).setConstant(1.0 / cfg.max_velocity);

  s.feature_offset = Eigen::VectorXd::Zero(kFeatureSize);
  s.feature_scale = Eigen::VectorXd::Ones(kFeatureSize);
  s.feature_scale.segment<2>(features::ball_relative).setConstant(1.0 / cfg.string_length);
  s.feature_scale.segment<2>(features::ball_velocity).setConstant(0.5 / cfg.max_velocity);
  s.feature_offset.segment<2>(features::cup_position) = centre;
  s.feature_scale.segment<2>(features::cup_position) = half.cwiseInverse();
  s.feature_scale.segment<2>(features::cup_velocity).setConstant(1.0 / cfg.max_velocity);
  return s;
}

}  // namespace sacx::env
