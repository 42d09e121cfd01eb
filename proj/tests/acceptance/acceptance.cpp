// Acceptance criteria, one PASS / FAIL / SKIPPED line each.
// The learning-curve criteria (7, 8) only run with --slow.

#include "sacx/env/ball_in_cup.hpp"
#include "sacx/oracles/checks.hpp"
#include "sacx/orchestrator/config.hpp"
#include "sacx/orchestrator/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

using namespace sacx;
using namespace sacx::env;

namespace {

int failures = 0;

void report(int id, const std::string& status, const std::string& text) {
  if (status == "FAIL") ++failures;
  std::printf("[criterion %d] %s: %s\n", id, status.c_str(), text.c_str());
  std::fflush(stdout);
}

void report(int id, bool pass, const std::string& text) { report(id, std::string(pass ? "PASS" : "FAIL"), text); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void gradients() {
  const auto start = std::chrono::steady_clock::now();
  const auto layers = oracles::check_layer_gradients(20, 101);
  const auto nets = oracles::check_network_gradients(20, 2, 102);
  const double elapsed = seconds_since(start);
  report(1, layers.passed && nets.passed && elapsed < 60.0,
         layers.summary() + "; " + nets.summary() + fmt("; total %.1f s (limit 60 s)", elapsed));
}

void retrace() {
  const auto start = std::chrono::steady_clock::now();
  const auto literal = oracles::check_retrace(learner::TraceMode::paper_literal, 150, 201);
  const auto standard = oracles::check_retrace(learner::TraceMode::standard_first_step_one, 150, 202);
  const double elapsed = seconds_since(start);
  report(2, literal.passed && standard.passed && elapsed < 10.0,
         literal.summary() + "; " + standard.summary() + fmt("; total %.2f s (limit 10 s)", elapsed));
}

void gating() {
  const auto r = oracles::check_gating_invariance(301);
  report(3, r.passed, r.summary());
}

void rewards() {
  BallInCupConfig cfg;
  PhysicsState s = reset_state(cfg, 0.0);
  auto at = [&](double x, double z) {
    s.ball_position = s.cup_position + Vec2(x, z);
    return compute_rewards(cfg, s, Vec2::Zero());
  };
  const double r6 = at(0.0, 0.0)[5];
  const double peak = 1.0 / (2.0 * std::numbers::pi * 0.09 * 0.09);
  const double r7 = at(0.0, 0.0)[6];
  const double ratio = at(2.0 * 0.09, 0.0)[6] / r7;
  const double r7_error = std::abs(r7 - peak) / peak;
  const double ratio_error = std::abs(ratio - std::exp(-2.0)) / std::exp(-2.0);

  std::mt19937_64 rng(401);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  int violations = 0, r5_states = 0, r2_states = 0;
  for (int i = 0; i < 100000; ++i) {
    PhysicsState q = reset_state(cfg, 0.0);
    q.cup_position = Vec2(u(rng), 0.4 + 0.8 * u(rng));
    // half the states near the cup opening, half anywhere the string allows
    const double radius = i % 2 == 0 ? 0.2 * (u(rng) + 0.5) : 0.4 * (u(rng) + 0.5);
    const double a = angle(rng);
    q.ball_position = q.cup_position + radius * Vec2(std::sin(a), std::cos(a));
    q.cup_velocity = Vec2(4.0 * u(rng), 4.0 * u(rng));
    const auto r = compute_rewards(cfg, q, Vec2::Zero());
    r5_states += r[4] > 0.0;
    r2_states += r[1] > 0.0;
    if (r[4] > 0.0 && !(r[0] > 0.0)) ++violations;
    if (r[1] > 0.0 && !(r[0] > 0.0)) ++violations;
  }
  const bool ok = r6 == 0.5 && r7_error <= 1e-9 && ratio_error <= 1e-9 && violations == 0 && r5_states > 0 &&
                  r2_states > 0;
  report(4, ok,
         fmt("r6(0) = %.17g; r7(0,0) rel. error %.2g; r7(2s,0)/r7(0,0) rel. error %.2g; %d implication violations "
             "in 1e5 states (%d with r5, %d with r2)",
             r6, r7_error, ratio_error, violations, r5_states, r2_states));
}

void action_filter() {
  BallInCupConfig cfg;
  const double beta = cfg.filter_coefficient();
  ActionFilterState f;
  for (int i = 0; i < 20; ++i) filter_action(cfg, Vec2(1.0, -1.0), f);
  const double response = f.value.x();

  BallInCup env(cfg);
  std::mt19937_64 rng(501);
  env.reset(rng);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  int mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto r = env.step(Vec2(u(rng), u(rng)));
    if (r.observation.proprio.segment<2>(proprio::filter_state) != env.filter_state().value) ++mismatches;
  }
  report(5, response >= 0.94 && std::abs(beta - 0.13576) < 5e-5 && mismatches == 0,
         fmt("beta = %.6f, step response after 20 steps = %.5f (need >= 0.94), proprio/internal filter mismatches in "
             "1000 steps = %d",
             beta, response, mismatches));
}

void physics() {
  BallInCupConfig cfg;
  PhysicsState s = reset_state(cfg, 0.0);
  s.ball_position = s.cup_position + Vec2(0.01, 0.0);
  const double z0 = s.ball_position.y();
  double fall_error = 0.0;
  for (int k = 1; k <= 4; ++k) {
    s = step_physics(cfg, s, Vec2::Zero());
    const double t = cfg.control_dt * k;
    fall_error = std::max(fall_error, std::abs((z0 - s.ball_position.y()) - 0.5 * cfg.gravity * t * t));
  }

  s = reset_state(cfg, 0.05);
  std::vector<double> crossings;
  double prev = s.ball_position.x() - s.cup_position.x();
  for (int k = 0; k < 200; ++k) {
    s = step_physics(cfg, s, Vec2::Zero());
    const double x = s.ball_position.x() - s.cup_position.x();
    if (prev > 0.0 && x <= 0.0) crossings.push_back(cfg.control_dt * (k + prev / (prev - x)));
    prev = x;
  }
  const double expected = 2.0 * std::numbers::pi * std::sqrt(0.40 / cfg.gravity);
  const double period = crossings.size() >= 2
                            ? (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1)
                            : 0.0;
  const double period_error = std::abs(period - expected) / expected;

  std::mt19937_64 rng(601);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double longest = 0.0;
  for (int episode = 0; episode < 20; ++episode) {
    PhysicsState q = reset_state(cfg, rng);
    ActionFilterState f;
    for (int k = 0; k < 500; ++k) {
      q = step_physics(cfg, q, filter_action(cfg, Vec2(u(rng), u(rng)), f));
      longest = std::max(longest, (q.ball_position - q.cup_position).norm());
    }
  }
  report(6, fall_error <= 1e-3 && period_error <= 0.05 && longest <= 0.40 + 1e-6,
         fmt("free-fall error over 0.2 s = %.2e m; pendulum period %.4f s vs %.4f s (%.2f%%); longest string over "
             "10^4 random steps = %.9f m",
             fall_error, period, expected, 100.0 * period_error, longest));
}

bool same_file(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return fa.good() && fb.good() && sa.str() == sb.str() && !sa.str().empty();
}

void determinism(const std::filesystem::path& root) {
  auto cfg = orchestrator::parse_config_string(R"(
arm: mixed
mode: deterministic
episodes: 50
episode_length: 100
switch_period: 20
metrics_every: 50
write_episode_log: true
learner: {batch_size: 8, snippet_length: 10, target_sync_period: 200}
network:
  actor_group_width: 16
  critic_group_width: 16
  actor_trunk: [32]
  critic_trunk: [32]
  conv_channels: [4, 4]
)");
  const auto start = std::chrono::steady_clock::now();
  const auto a = orchestrator::run_seed(cfg, 7, root / "determinism_a");
  const auto b = orchestrator::run_seed(cfg, 7, root / "determinism_b");
  bool same = a.learner_steps == b.learner_steps && a.env_steps == b.env_steps;
  for (const char* f : {"curve.csv", "metrics.csv", "episodes.log", "checkpoint_final.ckpt"})
    same = same && same_file(a.directory / f, b.directory / f);
  report(9, same && a.learner_steps > 0,
         fmt("two 50-episode runs (seed 7, %zu env steps, %llu learner steps each): curve, metrics, episode log and "
             "final checkpoint %s; %.1f s",
             a.env_steps, static_cast<unsigned long long>(a.learner_steps), same ? "byte-identical" : "differ",
             seconds_since(start)));
}

struct SlowOptions {
  int episodes = 3000;
  int seeds = 5;
  std::string base;  // extra YAML applied to every arm
  std::filesystem::path root;
};

std::vector<orchestrator::SeedResult> run_arm(const std::string& arm, const SlowOptions& o) {
  auto cfg = orchestrator::parse_config_string("arm: " + arm + "\n" + o.base);
  cfg.episodes = o.episodes;
  cfg.mode = orchestrator::RunMode::deterministic;
  cfg.seeds.clear();
  for (int s = 1; s <= o.seeds; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  std::vector<orchestrator::SeedResult> out;
  for (auto seed : cfg.seeds) {
    out.push_back(orchestrator::run_seed(cfg, seed, o.root / arm / ("seed_" + std::to_string(seed))));
    out.back().store = {};
  }
  return out;
}

std::vector<const orchestrator::LearningCurvePoint*> points(const orchestrator::SeedResult& r, const std::string& task) {
  std::vector<const orchestrator::LearningCurvePoint*> out;
  for (const auto& p : r.curve)
    if (p.task == task) out.push_back(&p);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Best catch rate over any window of `window` consecutive evaluations.
double best_catch_rate(const orchestrator::SeedResult& r, const std::string& task, std::size_t window) {
  const auto p = points(r, task);
  if (p.empty()) return 0.0;
  window = std::min(window, p.size());
  double best = 0.0;
  int caught = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    caught += p[i]->caught;
    if (i >= window) caught -= p[i - window]->caught;
    if (i + 1 >= window) best = std::max(best, caught / static_cast<double>(window));
  }
  return best;
}

double final_catch_rate(const orchestrator::SeedResult& r, const std::string& task, std::size_t window) {
  const auto p = points(r, task);
  if (p.empty()) return 0.0;
  window = std::min(window, p.size());
  int caught = 0;
  for (std::size_t i = p.size() - window; i < p.size(); ++i) caught += p[i]->caught;
  return caught / static_cast<double>(window);
}

// Area under the evaluation-return curve, per evaluated episode.
double auc(const orchestrator::SeedResult& r, const std::string& task) {
  const auto p = points(r, task);
  double sum = 0.0;
  for (const auto* q : p) sum += q->eval_return;
  return p.empty() ? 0.0 : sum / static_cast<double>(p.size());
}

std::vector<double> per_seed(const std::vector<orchestrator::SeedResult>& runs, auto f) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(f(r));
  return out;
}

void learning_curves(const SlowOptions& o) {
  const std::string budget = fmt("%d episodes x %d seeds", o.episodes, o.seeds);
  const auto start = std::chrono::steady_clock::now();
  const auto features = run_arm("features_only", o);
  const double a = median(per_seed(features, [](const auto& r) { return best_catch_rate(r, "5F", 50); }));
  const auto pixels = run_arm("pixels_only", o);
  const auto mixed = run_arm("mixed", o);
  const auto asym = run_arm("mixed_asymmetric", o);
  const double auc_pixels = median(per_seed(pixels, [](const auto& r) { return auc(r, "5P"); }));
  const double auc_mixed = median(per_seed(mixed, [](const auto& r) { return auc(r, "5P"); }));
  const double auc_asym = median(per_seed(asym, [](const auto& r) { return auc(r, "5P"); }));
  const bool pa = a >= 0.5, pb = auc_mixed > auc_pixels, pc = auc_asym >= 0.9 * auc_mixed;
  report(7, pa && pb && pc,
         fmt("(a) features-only median best 50-evaluation 5F catch rate %.2f (need >= 0.50) %s; (b) median 5P AUC "
             "mixed %.3f vs pixels-only %.3f %s; (c) asymmetric %.3f vs mixed %.3f (need >= 90%%) %s; %s, %.0f s",
             a, pa ? "ok" : "not met", auc_mixed, auc_pixels, pb ? "ok" : "not met", auc_asym, auc_mixed,
             pc ? "ok" : "not met", budget.c_str(), seconds_since(start)));

  const auto distractor = run_arm("features_distractor", o);
  const double base = median(per_seed(features, [](const auto& r) { return final_catch_rate(r, "5F", 100); }));
  const double with = median(per_seed(distractor, [](const auto& r) { return final_catch_rate(r, "5F", 100); }));
  report(8, std::abs(with - base) <= 0.20,
         fmt("final median 5F catch rate (last 100 evaluations) %.2f without and %.2f with 8F, change %.0f points "
             "(limit 20); %s",
             base, with, 100.0 * std::abs(with - base), budget.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool slow = false;
  SlowOptions slow_opts;
  std::string root = "acceptance_runs";
  std::string base_file;
  app.add_flag("--slow", slow, "also run the learning-curve criteria (hours)");
  app.add_option("--slow-episodes", slow_opts.episodes, "episode budget per arm and seed");
  app.add_option("--slow-seeds", slow_opts.seeds, "seeds per arm");
  app.add_option("--slow-overrides", base_file, "YAML file of settings applied to every slow-tier arm")
      ->check(CLI::ExistingFile);
  app.add_option("--output", root, "directory for experiment outputs");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  slow_opts.root = std::filesystem::path(root) / "slow";
  if (!base_file.empty()) {
    std::ifstream in(base_file);
    std::stringstream ss;
    ss << in.rdbuf();
    slow_opts.base = ss.str();
  }

  const auto run = [](int id, auto&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, std::string("FAIL"), std::string("threw: ") + e.what());
    }
  };
  run(1, gradients);
  run(2, retrace);
  run(3, gating);
  run(4, rewards);
  run(5, action_filter);
  run(6, physics);
  if (slow) {
    run(7, [&] { learning_curves(slow_opts); });
  } else {
    report(7, std::string("SKIPPED"), "learning-curve tier; run with --slow");
    report(8, std::string("SKIPPED"), "learning-curve tier; run with --slow");
  }
  run(9, [&] { determinism(root); });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
