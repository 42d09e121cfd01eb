#pragma once

#include "sacx/gated/networks.hpp"
#include "sacx/learner/retrace.hpp"
#include "sacx/nn/adam.hpp"
#include "sacx/replay/replay.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

namespace sacx::learner {

using gated::FilterVector;
using gated::GatedNet;
using gated::ParamStore;
using gated::TaskSpec;

struct LearnerConfig {
  RetraceConfig retrace;
  std::size_t batch_size = 32;
  std::size_t snippet_length = 20;
  nn::AdamConfig adam;

  void validate() const;
  bool operator==(const LearnerConfig& o) const {
    return retrace == o.retrace && batch_size == o.batch_size && snippet_length == o.snippet_length &&
           adam.learning_rate == o.adam.learning_rate && adam.beta1 == o.adam.beta1 && adam.beta2 == o.adam.beta2 &&
           adam.epsilon == o.adam.epsilon;
  }
};

struct LearnerMetrics {
  std::uint64_t step = 0;  // optimizer steps completed after this call
  bool waited = false;     // replay had no eligible window; nothing was done
  std::vector<double> critic_loss;
  std::vector<double> policy_objective;
  double entropy = 0.0;  // mean differential entropy of the online policies
  double critic_grad_norm = 0.0;
  double actor_grad_norm = 0.0;
  std::size_t skipped_snippets = 0;  // quarantined for non-finite targets
  bool critic_update_skipped = false;
  bool actor_update_skipped = false;
  bool synced = false;
};

/// Snippets laid out for the networks. State columns are ordered time-major:
/// column j*B + b holds step j of snippet b for j = 0..n, so the first n*B
/// columns are the visited states and the last n*B their successors.
template <typename Scalar>
struct LearnerBatch {
  Index length = 0;
  Index batch = 0;
  gated::ObservationBatch<Scalar> states;
  Matrix<Scalar> actions;                // action_dim x n*B
  std::vector<Eigen::ArrayXXd> rewards;  // per task, n x B
  Eigen::ArrayXXd behavior_log_prob;     // n x B
  Eigen::ArrayXXd terminal;              // n x B

  Index visited() const { return length * batch; }
};

template <typename Scalar>
LearnerBatch<Scalar> assemble_batch(const std::vector<replay::Snippet>& snippets, const env::ObservationScaling& scaling,
                                    const gated::InputShapes& shapes, FilterVector need, int task_count) {
  LearnerBatch<Scalar> lb;
  if (snippets.empty()) throw std::invalid_argument("empty snippet batch");
  lb.batch = static_cast<Index>(snippets.size());
  lb.length = static_cast<Index>(snippets.front().size());
  const Index n = lb.length, B = lb.batch;
  std::vector<const env::Observation*> obs(static_cast<std::size_t>((n + 1) * B));
  lb.actions.resize(shapes.action_dim, n * B);
  lb.rewards.assign(static_cast<std::size_t>(task_count), Eigen::ArrayXXd(n, B));
  lb.behavior_log_prob.resize(n, B);
  lb.terminal.resize(n, B);
  for (Index b = 0; b < B; ++b) {
    const auto& s = snippets[static_cast<std::size_t>(b)];
    if (static_cast<Index>(s.size()) != n) throw std::invalid_argument("snippets differ in length");
    for (Index j = 0; j < n; ++j) {
      const auto& t = s.steps[static_cast<std::size_t>(j)];
      obs[static_cast<std::size_t>(j * B + b)] = &t.obs;
      lb.actions.col(j * B + b) = t.action.cast<Scalar>();
      if (t.rewards.size() != task_count) throw std::invalid_argument("reward vector length differs from task count");
      for (int k = 0; k < task_count; ++k) lb.rewards[static_cast<std::size_t>(k)](j, b) = t.rewards(k);
      if (!std::isfinite(t.behavior_log_prob)) throw std::invalid_argument("missing behavior log-probability");
      lb.behavior_log_prob(j, b) = t.behavior_log_prob;
      lb.terminal(j, b) = t.terminal ? 1.0 : 0.0;
    }
    obs[static_cast<std::size_t>(n * B + b)] = &s.next_observation;
  }
  lb.states = gated::make_batch<Scalar>(std::span<const env::Observation* const>(obs), scaling, shapes, need);
  return lb;
}

/// Retrace targets for every task; snippets whose targets are not finite for
/// any task are flagged invalid and excluded from the losses.
struct TargetValues {
  std::vector<Eigen::ArrayXXd> q_ret;   // per task, n x B
  std::vector<Eigen::ArrayXXd> traces;  // per task, n x B
  std::vector<bool> valid;              // per snippet
  std::size_t skipped = 0;
};

/// Tasks sharing a filter, so that each distinct filter runs its trunk once.
/// `positions` index the task list, `ids` are the matching head ids.
struct FilterGroup {
  std::vector<std::size_t> positions;
  std::vector<int> ids;
};
std::map<std::array<bool, gated::kGroupCount>, FilterGroup> group_by_filter(const std::vector<TaskSpec>& tasks,
                                                                            bool policy);
FilterVector groups_needed(const std::vector<TaskSpec>& tasks);

template <typename Scalar>
Matrix<Scalar> standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(n(rng));
  return m;
}

template <typename Scalar>
Eigen::ArrayXXd reshape_time_major(const RowVector<Scalar>& row, Index n, Index B) {
  Eigen::ArrayXXd out(n, B);
  for (Index j = 0; j < n; ++j)
    for (Index b = 0; b < B; ++b) out(j, b) = static_cast<double>(row(j * B + b));
  return out;
}

template <typename Scalar>
TargetValues compute_targets(const ParamStore<Scalar>& store, const LearnerBatch<Scalar>& lb,
                             const std::vector<TaskSpec>& tasks, const RetraceConfig& cfg, std::mt19937_64& rng) {
  const Index n = lb.length, B = lb.batch, nB = lb.visited(), A = store.actor.arch->action_dim();
  std::vector<Index> current(static_cast<std::size_t>(nB)), next(static_cast<std::size_t>(nB));
  for (Index c = 0; c < nB; ++c) {
    current[static_cast<std::size_t>(c)] = c;
    next[static_cast<std::size_t>(c)] = c + B;
  }
  const std::size_t K = tasks.size();
  std::vector<gated::GaussianPolicyParams<Scalar>> pi(K);

  FilterVector pol_groups, crit_groups;
  for (const auto& t : tasks)
    for (auto g : gated::kAllGroups) {
      pol_groups[g] = pol_groups[g] || t.policy_filter[g];
      crit_groups[g] = crit_groups[g] || t.critic_filter[g];
    }
  const auto& ta = store.target_actor;
  auto actor_emb = gated::encode(ta, lb.states, pol_groups, false).embedding;
  for (const auto& [mask, grp] : group_by_filter(tasks, true)) {
    auto heads = gated::predict_heads(ta, actor_emb, FilterVector{mask}, nullptr, std::span<const int>(grp.ids));
    for (std::size_t k = 0; k < grp.ids.size(); ++k)
      pi[grp.positions[k]] =
          gated::gaussian_from_head(heads[k], ta.arch->std_min(), ta.arch->std_max());
  }

  const auto& tc = store.target_critic;
  auto critic_emb = gated::encode(tc, lb.states, crit_groups, false).embedding;
  std::vector<RowVector<Scalar>> q_taken(K);
  for (const auto& [mask, grp] : group_by_filter(tasks, false)) {
    auto heads = gated::predict_heads(tc, critic_emb, FilterVector{mask}, &lb.actions, std::span<const int>(grp.ids), current);
    for (std::size_t k = 0; k < grp.ids.size(); ++k) q_taken[grp.positions[k]] = heads[k].row(0);
  }

  TargetValues out;
  out.valid.assign(static_cast<std::size_t>(B), true);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& task = tasks[k];
    const int id = task.task_id;
    gated::GaussianPolicyParams<Scalar> now{pi[k].mean.leftCols(nB), pi[k].std.leftCols(nB)};
    gated::GaussianPolicyParams<Scalar> later{pi[k].mean.rightCols(nB), pi[k].std.rightCols(nB)};
    RetraceInputs in;
    in.rewards = lb.rewards[static_cast<std::size_t>(id)];
    in.terminal = lb.terminal;
    in.q_target = reshape_time_major<Scalar>(q_taken[k], n, B);
    in.trace = trace_coefficients(reshape_time_major<Scalar>(gated::log_prob(now, lb.actions), n, B),
                                  lb.behavior_log_prob);
    in.v_next = Eigen::ArrayXXd::Zero(n, B);
    for (int m = 0; m < cfg.expectation_samples; ++m) {
      Matrix<Scalar> a_next = gated::sample_action(later, standard_normal<Scalar>(A, nB, rng));
      auto q = gated::predict_heads(tc, critic_emb, task.critic_filter, &a_next, std::span<const int>(&id, 1), next);
      in.v_next += reshape_time_major<Scalar>(q[0].row(0), n, B);
    }
    in.v_next /= cfg.expectation_samples;
    out.q_ret.push_back(retrace_targets(in, cfg));
    out.traces.push_back(std::move(in.trace));
    for (Index b = 0; b < B; ++b)
      if (!out.q_ret.back().col(b).isFinite().all()) out.valid[static_cast<std::size_t>(b)] = false;
  }
  for (bool v : out.valid) out.skipped += v ? 0 : 1;
  return out;
}

template <typename Scalar>
struct LossResult {
  double total = 0.0;
  std::vector<double> per_task;
  ParameterSet<Scalar> grads;
  double entropy = 0.0;
};

/// Sum over tasks of the mean squared error between the online critic and
/// the (constant) retrace targets, with gradients for the critic only.
template <typename Scalar>
LossResult<Scalar> critic_loss(const ParamStore<Scalar>& store, const LearnerBatch<Scalar>& lb,
                               const std::vector<TaskSpec>& tasks, const TargetValues& targets) {
  const auto& net = store.critic;
  const Index n = lb.length, B = lb.batch, nB = lb.visited();
  LossResult<Scalar> res;
  res.per_task.assign(tasks.size(), 0.0);
  res.grads = net.params.zeros_like();

  Eigen::ArrayXXd weight(n, B);
  Index valid = 0;
  for (Index b = 0; b < B; ++b) {
    const bool ok = targets.valid[static_cast<std::size_t>(b)];
    weight.col(b).setConstant(ok ? 1.0 : 0.0);
    valid += ok ? 1 : 0;
  }
  if (valid == 0) return res;
  const double count = static_cast<double>(valid * n);

  FilterVector crit;
  for (const auto& t : tasks)
    for (auto g : gated::kAllGroups) crit[g] = crit[g] || t.critic_filter[g];
  std::vector<Index> current(static_cast<std::size_t>(nB));
  for (Index c = 0; c < nB; ++c) current[static_cast<std::size_t>(c)] = c;

  gated::ObservationBatch<Scalar> visited;
  visited.batch = nB;
  for (auto g : gated::kAllGroups)
    if (crit[g]) visited[g] = lb.states[g].leftCols(nB);
  auto enc = gated::encode(net, visited, crit, true);
  for (const auto& [mask, grp] : group_by_filter(tasks, false)) {
    auto pass = gated::run_heads(net, enc, FilterVector{mask}, &lb.actions, std::span<const int>(grp.ids));
    std::vector<Matrix<Scalar>> d_heads;
    for (std::size_t k = 0; k < grp.ids.size(); ++k) {
      const auto& q = pass.heads[k].output;
      const auto& target = targets.q_ret[grp.positions[k]];
      Matrix<Scalar> d(1, nB);
      double loss = 0.0;
      for (Index j = 0; j < n; ++j)
        for (Index b = 0; b < B; ++b) {
          const Index c = j * B + b;
          const double w = weight(j, b);
          const double err = w > 0.0 ? static_cast<double>(q(0, c)) - target(j, b) : 0.0;
          loss += err * err;
          d(0, c) = static_cast<Scalar>(2.0 * err / count);
        }
      res.per_task[grp.positions[k]] = loss / count;
      d_heads.push_back(std::move(d));
    }
    gated::backward_heads(net, pass, std::span<const Matrix<Scalar>>(d_heads), &res.grads, &enc);
  }
  gated::backward_encoders(net, enc, res.grads);
  for (double l : res.per_task) res.total += l;
  return res;
}

/// Entropy-regularised reparameterised policy objective
///   sum_T mean_s [Q_T(s, a) - alpha log pi_T(a|s)],  a = mu_T(s) + sigma_T(s) * eps,
/// with the online critic held fixed. `grads` are gradients of the negated
/// objective (a loss) w.r.t. the actor parameters.
template <typename Scalar>
LossResult<Scalar> policy_loss(const ParamStore<Scalar>& store, const LearnerBatch<Scalar>& lb,
                               const std::vector<TaskSpec>& tasks, const RetraceConfig& cfg, std::mt19937_64& rng) {
  const auto& actor = store.actor;
  const auto& critic = store.critic;
  const Index nB = lb.visited(), A = actor.arch->action_dim();
  LossResult<Scalar> res;
  res.per_task.assign(tasks.size(), 0.0);
  res.grads = actor.params.zeros_like();
  const double alpha = cfg.entropy_weight;
  const double N = static_cast<double>(nB);

  FilterVector pol, crit;
  for (const auto& t : tasks)
    for (auto g : gated::kAllGroups) {
      pol[g] = pol[g] || t.policy_filter[g];
      crit[g] = crit[g] || t.critic_filter[g];
    }
  gated::ObservationBatch<Scalar> visited;
  visited.batch = nB;
  for (auto g : gated::kAllGroups)
    if (pol[g] || crit[g]) visited[g] = lb.states[g].leftCols(nB);

  auto actor_enc = gated::encode(actor, visited, pol, true);
  auto critic_enc = gated::encode(critic, visited, crit, false);
  const Scalar half_log_2pie = Scalar(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
  double entropy_sum = 0.0;

  for (const auto& [mask, grp] : group_by_filter(tasks, true)) {
    auto pass = gated::run_heads(actor, actor_enc, FilterVector{mask}, nullptr, std::span<const int>(grp.ids));
    std::vector<Matrix<Scalar>> d_heads;
    for (std::size_t k = 0; k < grp.ids.size(); ++k) {
      const auto& task = tasks[grp.positions[k]];
      const auto& head = pass.heads[k].output;
      auto p = gated::gaussian_from_head(head, actor.arch->std_min(), actor.arch->std_max());
      Matrix<Scalar> eps = standard_normal<Scalar>(A, nB, rng);
      Matrix<Scalar> a = gated::sample_action(p, eps);
      const int id = task.task_id;
      auto cpass = gated::run_heads(critic, critic_enc, task.critic_filter, &a, std::span<const int>(&id, 1));
      const auto& q = cpass.heads[0].output;
      RowVector<Scalar> lp = gated::log_prob(p, a);
      res.per_task[grp.positions[k]] =
          (q.row(0).template cast<double>().array() - alpha * lp.template cast<double>().array()).mean();
      entropy_sum += (p.std.array().log().colwise().sum() + Scalar(A) * half_log_2pie).template cast<double>().mean();

      // d(-objective)/dq = -1/N; the critic receives no parameter gradient.
      Matrix<Scalar> d_q = Matrix<Scalar>::Constant(1, nB, Scalar(-1.0 / N));
      Matrix<Scalar> d_a = gated::backward_heads(critic, cpass, std::span<const Matrix<Scalar>>(&d_q, 1), nullptr,
                                                 nullptr, true);
      // log pi(mu + sigma eps) = -|eps|^2/2 - sum log sigma - const: only sigma enters.
      Matrix<Scalar> d_mean = d_a;
      Matrix<Scalar> d_std =
          (d_a.array() * eps.array() - Scalar(alpha / N) / p.std.array()).matrix();
      d_heads.push_back(gated::gaussian_head_backward(head, d_mean, d_std, actor.arch->std_min(), actor.arch->std_max()));
    }
    gated::backward_heads(actor, pass, std::span<const Matrix<Scalar>>(d_heads), &res.grads, &actor_enc);
  }
  gated::backward_encoders(actor, actor_enc, res.grads);
  for (double o : res.per_task) res.total += o;
  res.entropy = entropy_sum / static_cast<double>(tasks.size());
  return res;
}

/// Owns optimizer state and the sampling RNG; one call = one optimizer step
/// on the critic and one on the actor, both computed from the same parameters.
template <typename Scalar>
class Learner {
 public:
  Learner(std::vector<TaskSpec> tasks, LearnerConfig cfg, env::ObservationScaling scaling, std::uint64_t seed)
      : tasks_(std::move(tasks)), cfg_(cfg), scaling_(std::move(scaling)), rng_(seed) {
    cfg_.validate();
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      if (tasks_[i].task_id != static_cast<int>(i)) throw std::invalid_argument("task ids must be 0..K-1 in order");
      tasks_[i].validate();
    }
  }

  LearnerMetrics step(replay::ReplayBuffer& buffer, ParamStore<Scalar>& store) {
    auto snippets = buffer.sample_snippets(cfg_.batch_size, cfg_.snippet_length, rng_);
    if (!snippets) {
      LearnerMetrics m;
      m.step = steps_;
      m.waited = true;
      return m;
    }
    return step_on(*snippets, store);
  }

  LearnerMetrics step_on(const std::vector<replay::Snippet>& snippets, ParamStore<Scalar>& store) {
    ensure_optimizers(store);
    auto lb = assemble_batch<Scalar>(snippets, scaling_, store.actor.arch->shapes(), groups_needed(tasks_),
                                     static_cast<int>(tasks_.size()));
    auto targets = compute_targets(store, lb, tasks_, cfg_.retrace, rng_);
    auto critic = critic_loss(store, lb, tasks_, targets);
    auto policy = policy_loss(store, lb, tasks_, cfg_.retrace, rng_);

    LearnerMetrics m;
    m.critic_loss = critic.per_task;
    m.policy_objective = policy.per_task;
    m.entropy = policy.entropy;
    m.skipped_snippets = targets.skipped;
    m.critic_grad_norm = std::sqrt(squared_norm(critic.grads));
    m.actor_grad_norm = std::sqrt(squared_norm(policy.grads));
    m.critic_update_skipped = !nn::adam_step(store.critic.params, critic.grads, *critic_adam_);
    m.actor_update_skipped = !nn::adam_step(store.actor.params, policy.grads, *actor_adam_);
    ++steps_;
    m.synced = gated::sync_targets(store, steps_);
    m.step = steps_;
    return m;
  }

  std::uint64_t steps() const { return steps_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const LearnerConfig& config() const { return cfg_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void ensure_optimizers(const ParamStore<Scalar>& store) {
    if (!critic_adam_) critic_adam_.emplace(store.critic.params, cfg_.adam);
    if (!actor_adam_) actor_adam_.emplace(store.actor.params, cfg_.adam);
  }

  std::vector<TaskSpec> tasks_;
  LearnerConfig cfg_;
  env::ObservationScaling scaling_;
  std::mt19937_64 rng_;
  std::uint64_t steps_ = 0;
  std::optional<nn::AdamState<Scalar>> critic_adam_;
  std::optional<nn::AdamState<Scalar>> actor_adam_;
};

/// Append-only CSV: step,task,critic_loss,policy_objective,entropy,grad_norm
/// (grad_norm is the critic gradient norm; the actor's is logged as task -1).
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);
  void write(const LearnerMetrics& m);

 private:
  std::ofstream out_;
};

}  // namespace sacx::learner
