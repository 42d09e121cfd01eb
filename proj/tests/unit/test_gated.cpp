#include <doctest.h>

#include "sacx/oracles/probes.hpp"

#include <cmath>
#include <numbers>

using namespace sacx;
using namespace sacx::gated;
using sacx::oracles::gaussian_matrix;
using sacx::oracles::random_batch;

namespace {

struct TinyNets {
  InputShapes shapes = sacx::oracles::tiny_shapes();
  ArchitecturePtr actor_arch, critic_arch;
  ParamStore<double> store;

  explicit TinyNets(int tasks = 3, std::uint64_t seed = 1) {
    auto sizes = sacx::oracles::tiny_sizes();
    actor_arch = std::make_shared<Architecture>(Role::actor, shapes, sizes, tasks);
    critic_arch = std::make_shared<Architecture>(Role::critic, shapes, sizes, tasks);
    std::mt19937_64 rng(seed);
    store = ParamStore<double>::create(actor_arch, critic_arch, rng);
    sacx::oracles::jitter(store.actor.params, rng);
    sacx::oracles::jitter(store.critic.params, rng);
  }
};

TaskSpec make_task(int id, FilterVector policy, FilterVector critic) {
  TaskSpec t;
  t.task_id = id;
  t.reward_id = 5;
  t.policy_filter = policy;
  t.critic_filter = critic;
  return t;
}

const std::vector<FilterVector> kValidFilters = {FilterVector::of(true, true, false), FilterVector::of(true, false, true),
                                                 FilterVector::of(true, true, true)};

}  // namespace

TEST_CASE("task names and filter validation") {
  auto t = parse_task_name("5P", 3);
  CHECK(t.reward_id == 5);
  CHECK(t.task_id == 3);
  CHECK(t.policy_filter == FilterVector::pixel_space());
  CHECK(t.name() == "5P");
  CHECK_THROWS(parse_task_name("9F", 0));
  CHECK_THROWS(parse_task_name("5X", 0));

  TaskSpec bad = t;
  bad.policy_filter = FilterVector::of(true, false, false);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.policy_filter = FilterVector::of(false, true, true);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = t;
  bad.reward_id = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("default architecture dimensions") {
  InputShapes shapes;
  NetworkSizes sizes;
  Architecture actor(Role::actor, shapes, sizes, 10);
  Architecture critic(Role::critic, shapes, sizes, 10);
  CHECK(actor.embedding_width() == 100);
  CHECK(critic.embedding_width() == 200);
  CHECK(actor.encoder(StateGroup::image).input_size() == 3 * 32 * 32);
  CHECK(actor.trunk().input_size() == 100);
  CHECK(critic.trunk().input_size() == 202);
  CHECK(actor.trunk().output_size() == 200);
  CHECK(critic.trunk().output_size() == 400);
  CHECK(actor.head().output_size() == 4);
  CHECK(critic.head().output_size() == 1);
  CHECK(actor.std_min() == doctest::Approx(0.1));
  CHECK(actor.std_max() == doctest::Approx(1.0));
  CHECK_THROWS_AS(actor.head_offset(10), std::out_of_range);
  CHECK_THROWS_AS(actor.head_offset(-1), std::out_of_range);
}

TEST_CASE("encode_groups") {
  TinyNets nets;
  std::mt19937_64 rng(3);
  auto obs = random_batch(nets.shapes, 4, rng);

  SUBCASE("embeddings lie in (-1, 1)") {
    auto g = encode_groups(nets.store.actor, obs);
    for (const auto& e : g) {
      CHECK(e.rows() == nets.actor_arch->embedding_width());
      CHECK(e.cwiseAbs().maxCoeff() < 1.0);
    }
  }
  SUBCASE("zero observation through a zero encoder gives a zero pre-norm embedding") {
    auto net = nets.store.actor;
    for (std::size_t i = net.arch->encoder_offset(StateGroup::proprio);
         i < net.arch->encoder_offset(StateGroup::proprio) + 2; ++i)
      net.params.tensors[i].setZero();
    Matrix<double> zero = Matrix<double>::Zero(nets.shapes.proprio, 1);
    nn::Network dense_only(nets.shapes.proprio, {nn::Dense{nets.shapes.proprio, net.arch->embedding_width()}});
    auto pre = nn::predict(dense_only, view(net.params, net.arch->encoder_offset(StateGroup::proprio), 2), zero);
    CHECK(pre.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("groups are encoded independently") {
    auto other = obs;
    other[StateGroup::image].setRandom();
    auto a = encode_groups(nets.store.critic, obs);
    auto b = encode_groups(nets.store.critic, other);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
    CHECK(a[2] != b[2]);
  }
  SUBCASE("shape mismatch rejected") {
    auto wrong = obs;
    wrong[StateGroup::features] = Matrix<double>::Zero(nets.shapes.features + 1, 4);
    CHECK_THROWS_AS(encode_groups(nets.store.actor, wrong), nn::ShapeError);
  }
}

TEST_CASE("gate_and_merge") {
  std::mt19937_64 rng(5);
  std::array<Matrix<double>, kGroupCount> g = {gaussian_matrix(4, 3, rng), gaussian_matrix(4, 3, rng),
                                               gaussian_matrix(4, 3, rng)};
  CHECK(gate_and_merge(g, FilterVector::of(true, true, true)) == g[0] + g[1] + g[2]);
  auto merged = gate_and_merge(g, FilterVector::of(true, false, true));
  auto perturbed = g;
  perturbed[1].setConstant(1e6);
  CHECK(gate_and_merge(perturbed, FilterVector::of(true, false, true)) == merged);
  CHECK(gate_and_merge(g, FilterVector::of(false, false, false)).isZero(0.0));
}

TEST_CASE("actor_forward") {
  TinyNets nets;
  std::mt19937_64 rng(7);
  auto obs = random_batch(nets.shapes, 6, rng);

  SUBCASE("variance stays in bounds for any input") {
    auto net = nets.store.actor;
    for (auto& t : net.params.tensors) t *= 50.0;
    for (int trial = 0; trial < 20; ++trial) {
      auto o = random_batch(nets.shapes, 8, rng);
      for (auto g : kAllGroups) o[g] *= 100.0;
      for (const auto& f : kValidFilters) {
        auto p = actor_forward(net, o, make_task(0, f, f));
        auto var = p.std.array().square();
        CHECK(var.minCoeff() >= 1e-2 - 1e-12);
        CHECK(var.maxCoeff() <= 1.0 + 1e-12);
        CHECK(p.mean.allFinite());
        CHECK(p.mean.cwiseAbs().maxCoeff() <= 1.0);
      }
    }
  }
  SUBCASE("identical heads give identical outputs") {
    auto net = nets.store.actor;
    const auto& a = *net.arch;
    for (std::size_t i = 0; i < a.head().tensor_count(); ++i)
      net.params.tensors[a.head_offset(2) + i] = net.params.tensors[a.head_offset(1) + i];
    auto f = FilterVector::feature_space();
    auto p1 = actor_forward(net, obs, make_task(1, f, f));
    auto p2 = actor_forward(net, obs, make_task(2, f, f));
    CHECK(p1.mean == p2.mean);
    CHECK(p1.std == p2.std);
  }
  SUBCASE("output invariant to a disabled image group") {
    auto task = make_task(0, FilterVector::feature_space(), FilterVector::feature_space());
    auto base = actor_forward(nets.store.actor, obs, task);
    auto other = obs;
    other[StateGroup::image].setRandom();
    auto p = actor_forward(nets.store.actor, other, task);
    CHECK(p.mean == base.mean);
    CHECK(p.std == base.std);
  }
  SUBCASE("unknown task rejected") {
    auto f = FilterVector::feature_space();
    CHECK_THROWS_AS(actor_forward(nets.store.actor, obs, make_task(3, f, f)), std::out_of_range);
    CHECK_THROWS_AS(actor_forward(nets.store.critic, obs, make_task(0, f, f)), std::invalid_argument);
  }
}

TEST_CASE("critic_forward") {
  TinyNets nets;
  std::mt19937_64 rng(9);
  auto obs = random_batch(nets.shapes, 5, rng);
  Matrix<double> action = sacx::oracles::uniform_matrix(2, 5, rng, -1.0, 1.0);

  SUBCASE("target equals online when parameters match") {
    auto task = make_task(1, FilterVector::pixel_space(), FilterVector::pixel_space());
    nets.store.target_critic = nets.store.critic;
    CHECK(critic_forward(nets.store, obs, action, task, true) == critic_forward(nets.store, obs, action, task, false));
  }
  SUBCASE("asymmetric critic ignores image content") {
    auto task = make_task(0, FilterVector::pixel_space(), FilterVector::feature_space());
    auto q = critic_forward(nets.store.critic, obs, action, task);
    auto other = obs;
    other[StateGroup::image].setRandom();
    CHECK(critic_forward(nets.store.critic, other, action, task) == q);
  }
  SUBCASE("zero final layer weights give the bias for any input") {
    auto net = nets.store.critic;
    const std::size_t h = net.arch->head_offset(2);
    net.params.tensors[h].setZero();
    net.params.tensors[h + 1].setConstant(0.375);
    auto task = make_task(2, FilterVector::of(true, true, true), FilterVector::of(true, true, true));
    auto q = critic_forward(net, obs, action, task);
    for (Index i = 0; i < q.size(); ++i) CHECK(q(i) == 0.375);
  }
  SUBCASE("unknown task rejected") {
    auto f = FilterVector::feature_space();
    CHECK_THROWS_AS(critic_forward(nets.store.critic, obs, action, make_task(7, f, f)), std::out_of_range);
  }
}

TEST_CASE("sample_action") {
  GaussianPolicyParams<double> p;
  p.mean = (Matrix<double>(2, 1) << 0.3, -0.6).finished();
  p.std = (Matrix<double>(2, 1) << 0.4, 0.9).finished();
  CHECK(sample_action(p, Matrix<double>::Zero(2, 1)) == p.mean);

  SUBCASE("Monte-Carlo mean") {
    std::mt19937_64 rng(11);
    const Index n = 100000;
    GaussianPolicyParams<double> wide;
    wide.mean = p.mean.replicate(1, n);
    wide.std = p.std.replicate(1, n);
    Matrix<double> a = sample_action(wide, gaussian_matrix(2, n, rng));
    Vector<double> m = a.rowwise().mean();
    for (Index d = 0; d < 2; ++d) CHECK(std::abs(m(d) - p.mean(d)) <= 3.0 * p.std(d) / std::sqrt(double(n)));
  }
  SUBCASE("derivative w.r.t. std is the noise") {
    Matrix<double> noise = (Matrix<double>(2, 1) << 1.7, -0.4).finished();
    auto q = p;
    q.std.array() += 1e-6;
    Matrix<double> slope = (sample_action(q, noise) - sample_action(p, noise)) / 1e-6;
    CHECK(slope(0) == doctest::Approx(1.7).epsilon(1e-8));
    CHECK(slope(1) == doctest::Approx(-0.4).epsilon(1e-8));
  }
}

TEST_CASE("log_prob") {
  GaussianPolicyParams<double> p;
  const int d = 3;
  p.mean = Matrix<double>::Constant(d, 1, 0.2);
  p.std = Matrix<double>::Ones(d, 1);
  CHECK(log_prob(p, p.mean)(0) == doctest::Approx(-d / 2.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

  SUBCASE("density integrates to one in 1-D") {
    GaussianPolicyParams<double> q;
    q.mean = Matrix<double>::Constant(1, 1, 0.1);
    q.std = Matrix<double>::Constant(1, 1, 0.3);
    const double lo = -3.0, hi = 3.0;
    const int n = 60000;
    const double h = (hi - lo) / n;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      Matrix<double> a = Matrix<double>::Constant(1, 1, lo + (i + 0.5) * h);
      integral += std::exp(log_prob(q, a)(0)) * h;
    }
    CHECK(std::abs(integral - 1.0) <= 1e-3);
  }
  SUBCASE("decreases with distance from the mean") {
    double prev = 1e300;
    for (int k = 0; k < 50; ++k) {
      Matrix<double> a = p.mean;
      a(1) += 0.1 * k;
      const double lp = log_prob(p, a)(0);
      CHECK(lp < prev);
      prev = lp;
    }
  }
}

TEST_CASE("sync_targets period") {
  TinyNets nets(2);
  auto& s = nets.store;
  std::mt19937_64 rng(13);
  int syncs = 0;
  for (std::uint64_t step = 1; step <= 3500; ++step) {
    s.actor.params.tensors[0](0, 0) += 0.001;
    ++s.actor.params.version;
    auto before = s.target_actor.params.tensors;
    if (sync_targets(s, step)) {
      ++syncs;
      CHECK(step % 1000 == 0);
      CHECK(s.target_actor.params.tensors == s.actor.params.tensors);
      CHECK(s.target_critic.params.tensors == s.critic.params.tensors);
    } else {
      CHECK(s.target_actor.params.tensors == before);
    }
  }
  CHECK(syncs == 3);
}

TEST_CASE("disabled groups receive exactly zero gradient") {
  TinyNets nets;
  std::mt19937_64 rng(17);
  auto obs = random_batch(nets.shapes, 4, rng);
  Matrix<double> action = sacx::oracles::uniform_matrix(2, 4, rng, -1.0, 1.0);
  for (const auto& f : kValidFilters) {
    auto task = make_task(1, f, f);
    auto atr = actor_forward_traced(nets.store.actor, obs, task);
    auto ag = nets.store.actor.params.zeros_like();
    actor_backward(nets.store.actor, atr, gaussian_matrix(2, 4, rng), gaussian_matrix(2, 4, rng), ag);
    auto ctr = critic_forward_traced(nets.store.critic, obs, action, task);
    auto cg = nets.store.critic.params.zeros_like();
    critic_backward(nets.store.critic, ctr, gaussian_matrix(1, 4, rng), &cg);
    for (auto g : kAllGroups) {
      for (std::size_t i = 0; i < nets.actor_arch->encoder(g).tensor_count(); ++i) {
        const auto& t = ag.tensors[nets.actor_arch->encoder_offset(g) + i];
        if (f[g])
          CHECK(t.squaredNorm() > 0.0);
        else
          CHECK(t.isZero(0.0));
      }
      for (std::size_t i = 0; i < nets.critic_arch->encoder(g).tensor_count(); ++i) {
        const auto& t = cg.tensors[nets.critic_arch->encoder_offset(g) + i];
        if (f[g])
          CHECK(t.squaredNorm() > 0.0);
        else
          CHECK(t.isZero(0.0));
      }
    }
    // Heads of other tasks are untouched.
    for (int other : {0, 2})
      for (std::size_t i = 0; i < nets.actor_arch->head().tensor_count(); ++i)
        CHECK(ag.tensors[nets.actor_arch->head_offset(other) + i].isZero(0.0));
  }
}

TEST_CASE("heads are independent, encoders are shared") {
  TinyNets nets;
  std::mt19937_64 rng(19);
  auto obs = random_batch(nets.shapes, 4, rng);
  auto f = FilterVector::feature_space();
  auto t0 = make_task(0, f, f), t1 = make_task(1, f, f);
  auto before = actor_forward(nets.store.actor, obs, t1);

  auto net = nets.store.actor;
  net.params.tensors[net.arch->head_offset(0)].setRandom();
  ++net.params.version;
  auto after = actor_forward(net, obs, t1);
  CHECK(after.mean == before.mean);
  CHECK(after.std == before.std);

  net = nets.store.actor;
  net.params.tensors[net.arch->encoder_offset(StateGroup::features)].array() += 0.1;
  ++net.params.version;
  CHECK(actor_forward(net, obs, t1).mean != before.mean);
  CHECK(actor_forward(net, obs, t0).mean != actor_forward(nets.store.actor, obs, t0).mean);
}

TEST_CASE("full actor and critic gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    TinyNets nets(2, 100 + seed);
    std::mt19937_64 rng(seed);
    auto obs = random_batch(nets.shapes, 3, rng);
    Matrix<double> action = sacx::oracles::uniform_matrix(2, 3, rng, -1.0, 1.0);
    const auto& f = kValidFilters[seed % kValidFilters.size()];
    auto task = make_task(static_cast<int>(seed % 2), f, f);
    CHECK(sacx::oracles::actor_gradient_error(nets.store.actor, obs, task, rng) <= 1e-4);
    double action_error = 1.0;
    CHECK(sacx::oracles::critic_gradient_error(nets.store.critic, obs, action, task, rng, 0, &action_error) <= 1e-4);
    CHECK(action_error <= 1e-4);
  }
}

TEST_CASE("make_batch scales observations") {
  env::BallInCupConfig cfg;
  auto scaling = env::ObservationScaling::for_config(cfg);
  env::BallInCup bic(cfg);
  std::mt19937_64 rng(23);
  auto o = bic.reset(rng);
  InputShapes shapes;
  auto b = make_batch<float>(o, scaling, shapes, FilterVector::of(true, true, true));
  CHECK(b.batch == 1);
  CHECK(b[StateGroup::image].rows() == 3072);
  CHECK(b[StateGroup::image].maxCoeff() <= 1.0f);
  auto only = make_batch<float>(o, scaling, shapes, FilterVector::feature_space());
  CHECK_FALSE(only.has(StateGroup::image));
  const double expect = (o.proprio(0) - scaling.proprio_offset(0)) * scaling.proprio_scale(0);
  CHECK(b[StateGroup::proprio](0, 0) == doctest::Approx(expect));
}
