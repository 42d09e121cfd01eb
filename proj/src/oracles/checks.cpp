#include "sacx/oracles/checks.hpp"

#include "sacx/learner/learner.hpp"
#include "sacx/oracles/naive_retrace.hpp"
#include "sacx/oracles/probes.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

namespace sacx::oracles {

using gated::FilterVector;
using gated::StateGroup;
using gated::TaskSpec;

std::string CheckResult::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s: worst %.3g (tolerance %.3g), %zu cases, %.2f s", name.c_str(), worst, tolerance,
                cases, seconds);
  return std::string(buf) + (detail.empty() ? "" : " [" + detail + "]");
}

namespace {

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ParameterSet<double> init_layers(const nn::Network& net, std::mt19937_64& rng) {
  ParameterSet<double> p;
  p.tensors = net.initialize<double>(rng);
  jitter(p, rng);
  return p;
}

const std::vector<FilterVector>& markov_filters() {
  static const std::vector<FilterVector> f = {FilterVector::of(true, true, false), FilterVector::of(true, false, true),
                                              FilterVector::of(true, true, true)};
  return f;
}

TaskSpec task_with(int id, FilterVector policy, FilterVector critic) {
  TaskSpec t;
  t.task_id = id;
  t.policy_filter = policy;
  t.critic_filter = critic;
  return t;
}

}  // namespace

CheckResult check_layer_gradients(int trials, std::uint64_t seed) {
  using namespace nn;
  Timer timer;
  CheckResult r;
  r.name = "layer gradients";
  r.tolerance = 1e-4;
  std::mt19937_64 rng(seed);
  auto run = [&](const Network& net, Index batch) {
    auto p = init_layers(net, rng);
    const Matrix<double> x = gaussian_matrix(net.input_size(), batch, rng);
    r.worst = std::max(r.worst, finite_diff_check(net, p, x, 1e-5, rng()));
    r.worst = std::max(r.worst, finite_diff_check_input(net, p, x, 1e-5, rng()));
    ++r.cases;
  };
  for (int t = 0; t < trials; ++t) {
    run(Network(5, {Dense{5, 4}, Dense{4, 3}}), 3);
    run(Network(6, {Dense{6, 7}, ActivationLayer{Activation::elu}, Dense{7, 3}}), 3);
    run(Network(5, {Dense{5, 6}, ActivationLayer{Activation::tanh}, Dense{6, 4}, ActivationLayer{Activation::softplus}}), 3);
    run(Network(6, {Dense{6, 8}, LayerNorm{8}, ActivationLayer{Activation::tanh}}), 3);
    Conv2d c1{2, 3, 8, 8, 4, 2};
    Conv2d c2{3, 2, c1.out_height(), c1.out_width(), 3, 2};
    run(Network(c1.in_size(), {c1, ActivationLayer{Activation::elu}, c2, ActivationLayer{Activation::elu},
                               Dense{c2.out_size(), 3}}),
        2);
  }
  r.seconds = timer.seconds();
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckResult check_network_gradients(int instances, int full_size_instances, std::uint64_t seed) {
  Timer timer;
  CheckResult r;
  r.name = "actor/critic gradients";
  r.tolerance = 1e-4;
  std::mt19937_64 rng(seed);
  const auto& filters = markov_filters();
  auto one = [&](const gated::InputShapes& shapes, const gated::NetworkSizes& sizes, int k, Index max_entries) {
    const int tasks = 1 + k % 3;
    auto actor = gated::GatedNet<double>::create(
        std::make_shared<const gated::Architecture>(gated::Role::actor, shapes, sizes, tasks), rng);
    auto critic = gated::GatedNet<double>::create(
        std::make_shared<const gated::Architecture>(gated::Role::critic, shapes, sizes, tasks), rng);
    jitter(actor.params, rng);
    jitter(critic.params, rng);
    const auto task = task_with(k % tasks, filters[static_cast<std::size_t>(k) % 3],
                                filters[static_cast<std::size_t>(k / 3) % 3]);
    const Index batch = 2 + k % 2;
    const auto obs = random_batch(shapes, batch, rng);
    const Matrix<double> action = uniform_matrix(shapes.action_dim, batch, rng, -1.0, 1.0);
    double action_error = 0.0;
    r.worst = std::max(r.worst, actor_gradient_error(actor, obs, task, rng, max_entries));
    r.worst = std::max(r.worst, critic_gradient_error(critic, obs, action, task, rng, max_entries, &action_error));
    r.worst = std::max(r.worst, action_error);
    r.cases += 2;
  };
  for (int k = 0; k < instances; ++k) one(tiny_shapes(), tiny_sizes(), k, 0);
  for (int k = 0; k < full_size_instances; ++k) one(gated::InputShapes{}, gated::NetworkSizes{}, k, 3);
  r.seconds = timer.seconds();
  r.passed = r.worst <= r.tolerance;
  std::ostringstream d;
  d << instances << " small actor+critic pairs fully probed, " << full_size_instances << " default-size pairs sampled";
  r.detail = d.str();
  return r;
}

CheckResult check_retrace(learner::TraceMode mode, int snippets, std::uint64_t seed) {
  Timer timer;
  CheckResult r;
  r.name = "retrace " + learner::to_string(mode);
  r.tolerance = 1e-10;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  learner::RetraceConfig cfg;
  cfg.trace_mode = mode;
  constexpr Eigen::Index B = 4;
  for (int s = 0; s < snippets; ++s) {
    const Eigen::Index n = 1 + s % 20;
    cfg.gamma = s % 9 == 0 ? 0.0 : 0.5 + 0.49 * unit(rng);
    cfg.bootstrap = s % 5 != 0;
    learner::RetraceInputs in;
    auto fill = [&](double scale) {
      Eigen::ArrayXXd a(n, B);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scale * normal(rng);
      return a;
    };
    in.rewards = fill(1.0);
    in.q_target = fill(3.0);
    in.v_next = fill(3.0);
    in.trace = learner::trace_coefficients(fill(1.0), fill(1.0));
    in.terminal = Eigen::ArrayXXd::Zero(n, B);
    for (Eigen::Index b = 0; b < B; ++b)
      if (unit(rng) < 0.3) in.terminal(static_cast<Eigen::Index>(unit(rng) * static_cast<double>(n)), b) = 1.0;
    const auto fast = learner::retrace_targets(in, cfg);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto slow = naive_retrace(in, b, cfg);
      r.worst = std::max(r.worst, (fast.col(b) - slow).abs().maxCoeff());
      ++r.cases;
    }
  }
  r.seconds = timer.seconds();
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckResult check_gating_invariance(std::uint64_t seed) {
  Timer timer;
  CheckResult r;
  r.name = "gating invariance";
  r.passed = true;
  std::mt19937_64 rng(seed);
  const auto shapes = tiny_shapes();
  auto sizes = tiny_sizes();
  std::ostringstream failures;

  for (const auto& pf : markov_filters()) {
    for (const auto& cf : markov_filters()) {
      const std::vector<TaskSpec> tasks = {task_with(0, pf, cf), task_with(1, FilterVector::of(true, true, true),
                                                                           FilterVector::of(true, true, true))};
      const std::vector<TaskSpec> only = {tasks[0]};
      auto store = gated::ParamStore<double>::create(
          std::make_shared<const gated::Architecture>(gated::Role::actor, shapes, sizes, 2),
          std::make_shared<const gated::Architecture>(gated::Role::critic, shapes, sizes, 2), rng);
      jitter(store.actor.params, rng);
      jitter(store.critic.params, rng);
      store.target_actor = store.actor;
      store.target_critic = store.critic;
      jitter(store.target_critic.params, rng, 0.01);

      // a synthetic learner batch: 3 snippets of 4 steps over all three groups
      learner::LearnerBatch<double> lb;
      lb.length = 4;
      lb.batch = 3;
      lb.states = random_batch(shapes, (lb.length + 1) * lb.batch, rng);
      lb.actions = uniform_matrix(shapes.action_dim, lb.visited(), rng, -1.0, 1.0);
      lb.rewards.assign(2, uniform_matrix(lb.length, lb.batch, rng, 0.0, 1.0).array());
      lb.behavior_log_prob = gaussian_matrix(lb.length, lb.batch, rng).array() - 2.0;
      lb.terminal = Eigen::ArrayXXd::Zero(lb.length, lb.batch);

      learner::RetraceConfig rcfg;
      const std::uint64_t noise_seed = rng();
      auto evaluate = [&](const learner::LearnerBatch<double>& b) {
        std::mt19937_64 noise(noise_seed);
        auto targets = learner::compute_targets(store, b, only, rcfg, noise);
        auto critic = learner::critic_loss(store, b, only, targets);
        auto policy = learner::policy_loss(store, b, only, rcfg, noise);
        auto p = gated::actor_forward(store.actor, b.states, tasks[0]);
        auto q = gated::critic_forward(store.critic, b.states, uniform_matrix(2, b.states.batch, noise, -1, 1), tasks[0]);
        return std::make_tuple(std::move(critic), std::move(policy), std::move(p), std::move(q));
      };
      const auto [c0, p0, a0, q0] = evaluate(lb);

      for (auto g : gated::kAllGroups) {
        const bool actor_off = !pf[g], critic_off = !cf[g];
        if (!actor_off && !critic_off) continue;
        auto perturbed = lb;
        perturbed.states[g] += gaussian_matrix(perturbed.states[g].rows(), perturbed.states[g].cols(), rng, 5.0);
        const auto [c1, p1, a1, q1] = evaluate(perturbed);
        ++r.cases;
        auto fail = [&](const std::string& what) {
          r.passed = false;
          failures << gated::to_string(pf) << "/" << gated::to_string(cf) << " " << gated::to_string(g) << ": " << what
                   << "; ";
        };
        if (actor_off) {
          if (a1.mean != a0.mean || a1.std != a0.std) fail("actor output moved");
          for (std::size_t i = 0; i < store.actor.arch->encoder(g).tensor_count(); ++i)
            if (!p0.grads.tensors[store.actor.arch->encoder_offset(g) + i].isZero(0.0)) fail("actor encoder gradient");
        }
        if (actor_off && critic_off) {
          if (p1.total != p0.total || p1.grads.tensors != p0.grads.tensors) fail("policy loss moved");
          if (c1.total != c0.total || c1.grads.tensors != c0.grads.tensors) fail("critic loss moved");
        }
        if (critic_off) {
          if (q1 != q0) fail("critic output moved");
          for (std::size_t i = 0; i < store.critic.arch->encoder(g).tensor_count(); ++i)
            if (!c0.grads.tensors[store.critic.arch->encoder_offset(g) + i].isZero(0.0)) fail("critic encoder gradient");
        }
      }
    }
  }
  r.detail = failures.str();
  r.seconds = timer.seconds();
  return r;
}

}  // namespace sacx::oracles
