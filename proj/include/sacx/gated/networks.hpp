#pragma once

#include "sacx/env/ball_in_cup.hpp"
#include "sacx/gated/architecture.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <span>

namespace sacx::gated {

/// Network inputs for a batch of observations, one sample per column.
/// Groups nobody asked for are left empty.
template <typename Scalar>
struct ObservationBatch {
  std::array<Matrix<Scalar>, kGroupCount> groups;
  Index batch = 0;

  const Matrix<Scalar>& operator[](StateGroup g) const { return groups[static_cast<std::size_t>(g)]; }
  Matrix<Scalar>& operator[](StateGroup g) { return groups[static_cast<std::size_t>(g)]; }
  bool has(StateGroup g) const { return (*this)[g].cols() == batch && batch > 0; }
};

template <typename Scalar>
void fill_column(ObservationBatch<Scalar>& out, Index col, const env::Observation& o,
                 const env::ObservationScaling& scaling, FilterVector need) {
  if (need[StateGroup::proprio])
    out[StateGroup::proprio].col(col) =
        ((o.proprio - scaling.proprio_offset).cwiseProduct(scaling.proprio_scale)).template cast<Scalar>();
  if (need[StateGroup::features])
    out[StateGroup::features].col(col) =
        ((o.features - scaling.feature_offset).cwiseProduct(scaling.feature_scale)).template cast<Scalar>();
  if (need[StateGroup::image]) {
    auto dst = out[StateGroup::image].col(col);
    if (static_cast<Index>(o.pixels.size()) != dst.size())
      throw nn::ShapeError("image group has " + std::to_string(o.pixels.size()) + " values, expected " +
                           std::to_string(dst.size()));
    for (Index i = 0; i < dst.size(); ++i) dst(i) = static_cast<Scalar>(o.pixels[i]) / Scalar(255);
  }
}

template <typename Scalar>
ObservationBatch<Scalar> make_batch(std::span<const env::Observation* const> obs, const env::ObservationScaling& scaling,
                                    const InputShapes& shapes, FilterVector need) {
  ObservationBatch<Scalar> out;
  out.batch = static_cast<Index>(obs.size());
  for (StateGroup g : kAllGroups)
    if (need[g]) out[g].resize(shapes.group_size(g), out.batch);
  for (Index c = 0; c < out.batch; ++c) fill_column(out, c, *obs[c], scaling, need);
  return out;
}

template <typename Scalar>
ObservationBatch<Scalar> make_batch(const env::Observation& obs, const env::ObservationScaling& scaling,
                                    const InputShapes& shapes, FilterVector need) {
  const env::Observation* p = &obs;
  return make_batch<Scalar>(std::span<const env::Observation* const>(&p, 1), scaling, shapes, need);
}

/// Diagonal Gaussian per column: mean in (-1, 1), std within the configured bounds.
template <typename Scalar>
struct GaussianPolicyParams {
  Matrix<Scalar> mean;
  Matrix<Scalar> std;

  Index dim() const { return mean.rows(); }
  Index batch() const { return mean.cols(); }
};

/// Head output rows [0, d) are mean pre-activations, [d, 2d) std pre-activations.
/// std = lo + (hi - lo) * tanh(softplus(x)) keeps the variance inside [lo^2, hi^2].
template <typename Scalar>
GaussianPolicyParams<Scalar> gaussian_from_head(const Matrix<Scalar>& head, double std_min, double std_max) {
  const Index d = head.rows() / 2;
  GaussianPolicyParams<Scalar> p;
  p.mean = head.topRows(d).array().tanh().matrix();
  p.std = (Scalar(std_min) + Scalar(std_max - std_min) * nn::softplus(head.bottomRows(d).array()).tanh()).matrix();
  return p;
}

template <typename Scalar>
Matrix<Scalar> gaussian_head_backward(const Matrix<Scalar>& head, const Matrix<Scalar>& d_mean,
                                      const Matrix<Scalar>& d_std, double std_min, double std_max) {
  const Index d = head.rows() / 2;
  Matrix<Scalar> grad(head.rows(), head.cols());
  auto m = head.topRows(d).array().tanh();
  grad.topRows(d) = (d_mean.array() * (Scalar(1) - m * m)).matrix();
  auto x = head.bottomRows(d).array();
  auto t = nn::softplus(x).tanh();
  grad.bottomRows(d) = (d_std.array() * Scalar(std_max - std_min) * (Scalar(1) - t * t) * nn::sigmoid(x)).matrix();
  return grad;
}

/// mean + std * noise, column-wise.
template <typename Scalar>
Matrix<Scalar> sample_action(const GaussianPolicyParams<Scalar>& p, const std::type_identity_t<Matrix<Scalar>>& noise) {
  return (p.mean.array() + p.std.array() * noise.array()).matrix();
}

/// Exact diagonal-Gaussian log density of each column of `action`.
template <typename Scalar>
RowVector<Scalar> log_prob(const GaussianPolicyParams<Scalar>& p, const std::type_identity_t<Matrix<Scalar>>& action) {
  const Scalar half_log_2pi = Scalar(0.5 * std::log(2.0 * std::numbers::pi));
  auto z = (action - p.mean).array() / p.std.array();
  return (Scalar(-0.5) * z.square() - p.std.array().log() - half_log_2pi).matrix().colwise().sum();
}

/// Sum of enabled embeddings; disabled ones are never read.
template <typename Scalar>
Matrix<Scalar> gate_and_merge(const std::array<Matrix<Scalar>, kGroupCount>& g, FilterVector e) {
  Index rows = -1, cols = -1;
  for (const auto& m : g)
    if (m.size() > 0) {
      if (rows >= 0 && (m.rows() != rows || m.cols() != cols))
        throw nn::ShapeError("group embeddings differ in shape");
      rows = m.rows();
      cols = m.cols();
    }
  if (rows < 0) throw nn::ShapeError("no group embeddings to merge");
  Matrix<Scalar> merged = Matrix<Scalar>::Zero(rows, cols);
  for (StateGroup s : kAllGroups) {
    if (!e[s]) continue;
    const auto& m = g[static_cast<std::size_t>(s)];
    if (m.size() == 0) throw nn::ShapeError("filter enables " + to_string(s) + " but its embedding was not computed");
    merged += m;
  }
  return merged;
}

/// Encoder outputs for one batch, with tapes when traced. `grad` accumulates
/// the loss gradient w.r.t. each embedding until backward_encoders runs.
template <typename Scalar>
struct EncoderPass {
  std::array<Matrix<Scalar>, kGroupCount> embedding;
  std::array<nn::Tape<Scalar>, kGroupCount> tapes;
  std::array<Matrix<Scalar>, kGroupCount> grad;
  FilterVector present;
  Index batch = 0;
};

template <typename Scalar>
EncoderPass<Scalar> encode(const GatedNet<Scalar>& net, const ObservationBatch<Scalar>& obs, FilterVector groups,
                           bool traced) {
  EncoderPass<Scalar> pass;
  pass.batch = obs.batch;
  for (StateGroup g : kAllGroups) {
    if (!groups[g]) continue;
    if (!obs.has(g)) throw nn::ShapeError(to_string(g) + " observations missing from batch");
    const auto i = static_cast<std::size_t>(g);
    if (obs[g].rows() != net.arch->encoder(g).input_size())
      throw nn::ShapeError(to_string(g) + " observation has " + std::to_string(obs[g].rows()) + " rows, encoder expects " +
                           std::to_string(net.arch->encoder(g).input_size()));
    if (traced) {
      auto r = nn::forward(net.arch->encoder(g), net.encoder_view(g), obs[g]);
      pass.embedding[i] = std::move(r.output);
      pass.tapes[i] = std::move(r.tape);
    } else {
      pass.embedding[i] = nn::predict(net.arch->encoder(g), net.encoder_view(g), obs[g]);
    }
    pass.present[g] = true;
  }
  return pass;
}

/// Embeddings of every group the batch carries.
template <typename Scalar>
std::array<Matrix<Scalar>, kGroupCount> encode_groups(const GatedNet<Scalar>& net, const ObservationBatch<Scalar>& obs) {
  FilterVector have;
  for (StateGroup g : kAllGroups) have[g] = obs.has(g);
  return encode(net, obs, have, false).embedding;
}

template <typename Scalar>
void backward_encoders(const GatedNet<Scalar>& net, const EncoderPass<Scalar>& pass, ParameterSet<Scalar>& grads) {
  for (StateGroup g : kAllGroups) {
    const auto i = static_cast<std::size_t>(g);
    if (!pass.present[g] || pass.grad[i].size() == 0) continue;
    const auto& enc = net.arch->encoder(g);
    nn::backward(enc, net.encoder_view(g), pass.tapes[i], pass.grad[i],
                 grad_span(grads, net.arch->encoder_offset(g), enc.tensor_count()), false);
  }
}

/// Trunk evaluated once for one filter, followed by the heads of several tasks.
template <typename Scalar>
struct HeadPass {
  FilterVector filter;
  nn::ForwardResult<Scalar> trunk;
  std::vector<int> tasks;
  std::vector<nn::ForwardResult<Scalar>> heads;
  std::vector<Index> columns;  // encoder columns used; empty = all
};

template <typename Scalar>
Matrix<Scalar> trunk_input(const GatedNet<Scalar>& net, const std::array<Matrix<Scalar>, kGroupCount>& embedding,
                           FilterVector filter, const std::type_identity_t<Matrix<Scalar>>* action, const std::vector<Index>& columns) {
  Matrix<Scalar> merged = gate_and_merge(embedding, filter);
  if (!columns.empty()) merged = merged(Eigen::all, columns).eval();
  if (net.arch->role() == Role::actor) return merged;
  if (!action || action->rows() != net.arch->action_dim() || action->cols() != merged.cols())
    throw nn::ShapeError("critic needs an action block of " + std::to_string(net.arch->action_dim()) + "x" +
                         std::to_string(merged.cols()));
  Matrix<Scalar> in(merged.rows() + action->rows(), merged.cols());
  in.topRows(merged.rows()) = merged;
  in.bottomRows(action->rows()) = *action;
  return in;
}

template <typename Scalar>
HeadPass<Scalar> run_heads(const GatedNet<Scalar>& net, const EncoderPass<Scalar>& enc, FilterVector filter,
                           const std::type_identity_t<Matrix<Scalar>>* action, std::span<const int> tasks, std::vector<Index> columns = {}) {
  HeadPass<Scalar> pass;
  pass.filter = filter;
  pass.columns = std::move(columns);
  pass.trunk = nn::forward(net.arch->trunk(), net.trunk_view(), trunk_input(net, enc.embedding, filter, action, pass.columns));
  for (int t : tasks) {
    pass.tasks.push_back(t);
    pass.heads.push_back(nn::forward(net.arch->head(), net.head_view(t), pass.trunk.output));
  }
  return pass;
}

/// Untraced head outputs, one matrix per task.
template <typename Scalar>
std::vector<Matrix<Scalar>> predict_heads(const GatedNet<Scalar>& net,
                                          const std::array<Matrix<Scalar>, kGroupCount>& embedding, FilterVector filter,
                                          const std::type_identity_t<Matrix<Scalar>>* action, std::span<const int> tasks,
                                          const std::vector<Index>& columns = {}) {
  Matrix<Scalar> h = nn::predict(net.arch->trunk(), net.trunk_view(), trunk_input(net, embedding, filter, action, columns));
  std::vector<Matrix<Scalar>> out;
  out.reserve(tasks.size());
  for (int t : tasks) out.push_back(nn::predict(net.arch->head(), net.head_view(t), h));
  return out;
}

/// Reverse pass through heads and trunk. `d_heads[k]` is the gradient for
/// `pass.heads[k]` (an empty matrix skips that head). With `grads` set,
/// parameter gradients are accumulated and the merged-embedding gradient is
/// routed into `enc.grad` for every group the filter enables. Returns the
/// gradient w.r.t. the action rows (critic) or an empty matrix.
template <typename Scalar>
Matrix<Scalar> backward_heads(const GatedNet<Scalar>& net, const HeadPass<Scalar>& pass,
                              std::span<const Matrix<Scalar>> d_heads,
                              std::type_identity_t<ParameterSet<Scalar>>* grads,
                              std::type_identity_t<EncoderPass<Scalar>>* enc, bool want_action_grad = false) {
  const auto& arch = *net.arch;
  Matrix<Scalar> d_trunk = Matrix<Scalar>::Zero(pass.trunk.output.rows(), pass.trunk.output.cols());
  bool any = false;
  for (std::size_t k = 0; k < pass.tasks.size(); ++k) {
    if (d_heads[k].size() == 0) continue;
    std::span<Matrix<Scalar>> hg;
    if (grads) hg = grad_span(*grads, arch.head_offset(pass.tasks[k]), arch.head().tensor_count());
    d_trunk += nn::backward(arch.head(), net.head_view(pass.tasks[k]), pass.heads[k].tape, d_heads[k], hg);
    any = true;
  }
  if (!any) return {};
  const bool route = grads && enc;
  std::span<Matrix<Scalar>> tg;
  if (grads) tg = grad_span(*grads, arch.trunk_offset(), arch.trunk().tensor_count());
  const bool need_input = route || want_action_grad;
  Matrix<Scalar> d_in = nn::backward(arch.trunk(), net.trunk_view(), pass.trunk.tape, d_trunk, tg, need_input);
  if (route) {
    const Index w = arch.embedding_width();
    Matrix<Scalar> d_merged;
    if (pass.columns.empty()) {
      d_merged = d_in.topRows(w);
    } else {
      d_merged = Matrix<Scalar>::Zero(w, enc->batch);
      for (std::size_t c = 0; c < pass.columns.size(); ++c) d_merged.col(pass.columns[c]) += d_in.col(c).head(w);
    }
    for (StateGroup g : kAllGroups) {
      if (!pass.filter[g]) continue;
      auto& acc = enc->grad[static_cast<std::size_t>(g)];
      if (acc.size() == 0)
        acc = d_merged;
      else
        acc += d_merged;
    }
  }
  if (want_action_grad && arch.role() == Role::critic) return d_in.bottomRows(arch.action_dim());
  return {};
}

namespace detail {

inline void require_role(const Architecture& arch, Role role) {
  if (arch.role() != role)
    throw std::invalid_argument(role == Role::actor ? "expected an actor network" : "expected a critic network");
}

}  // namespace detail

template <typename Scalar>
GaussianPolicyParams<Scalar> actor_forward(const GatedNet<Scalar>& actor, const ObservationBatch<Scalar>& obs,
                                           const TaskSpec& task) {
  detail::require_role(*actor.arch, Role::actor);
  actor.arch->head_offset(task.task_id);
  auto enc = encode(actor, obs, task.policy_filter, false);
  const int t = task.task_id;
  auto heads = predict_heads(actor, enc.embedding, task.policy_filter, nullptr, std::span<const int>(&t, 1));
  return gaussian_from_head(heads[0], actor.arch->std_min(), actor.arch->std_max());
}

template <typename Scalar>
RowVector<Scalar> critic_forward(const GatedNet<Scalar>& critic, const ObservationBatch<Scalar>& obs,
                                 const std::type_identity_t<Matrix<Scalar>>& action, const TaskSpec& task) {
  detail::require_role(*critic.arch, Role::critic);
  critic.arch->head_offset(task.task_id);
  auto enc = encode(critic, obs, task.critic_filter, false);
  const int t = task.task_id;
  auto heads = predict_heads(critic, enc.embedding, task.critic_filter, &action, std::span<const int>(&t, 1));
  return heads[0].row(0);
}

/// Single-task traced actor pass, for gradient checks and simple losses.
template <typename Scalar>
struct ActorTrace {
  EncoderPass<Scalar> enc;
  HeadPass<Scalar> heads;
  GaussianPolicyParams<Scalar> output;
};

template <typename Scalar>
ActorTrace<Scalar> actor_forward_traced(const GatedNet<Scalar>& actor, const ObservationBatch<Scalar>& obs,
                                        const TaskSpec& task) {
  detail::require_role(*actor.arch, Role::actor);
  ActorTrace<Scalar> tr;
  tr.enc = encode(actor, obs, task.policy_filter, true);
  const int t = task.task_id;
  tr.heads = run_heads(actor, tr.enc, task.policy_filter, nullptr, std::span<const int>(&t, 1));
  tr.output = gaussian_from_head(tr.heads.heads[0].output, actor.arch->std_min(), actor.arch->std_max());
  return tr;
}

template <typename Scalar>
void actor_backward(const GatedNet<Scalar>& actor, ActorTrace<Scalar>& tr, const Matrix<Scalar>& d_mean,
                    const Matrix<Scalar>& d_std, ParameterSet<Scalar>& grads) {
  Matrix<Scalar> d_head =
      gaussian_head_backward(tr.heads.heads[0].output, d_mean, d_std, actor.arch->std_min(), actor.arch->std_max());
  backward_heads(actor, tr.heads, std::span<const Matrix<Scalar>>(&d_head, 1), &grads, &tr.enc);
  backward_encoders(actor, tr.enc, grads);
}

template <typename Scalar>
struct CriticTrace {
  EncoderPass<Scalar> enc;
  HeadPass<Scalar> heads;
  RowVector<Scalar> q;
};

template <typename Scalar>
CriticTrace<Scalar> critic_forward_traced(const GatedNet<Scalar>& critic, const ObservationBatch<Scalar>& obs,
                                          const std::type_identity_t<Matrix<Scalar>>& action, const TaskSpec& task) {
  detail::require_role(*critic.arch, Role::critic);
  CriticTrace<Scalar> tr;
  tr.enc = encode(critic, obs, task.critic_filter, true);
  const int t = task.task_id;
  tr.heads = run_heads(critic, tr.enc, task.critic_filter, &action, std::span<const int>(&t, 1));
  tr.q = tr.heads.heads[0].output.row(0);
  return tr;
}

/// Returns the gradient w.r.t. the action. Parameter gradients are
/// accumulated into `grads` when given.
template <typename Scalar>
Matrix<Scalar> critic_backward(const GatedNet<Scalar>& critic, CriticTrace<Scalar>& tr,
                               const std::type_identity_t<RowVector<Scalar>>& d_q, ParameterSet<Scalar>* grads) {
  Matrix<Scalar> d_head = d_q;
  Matrix<Scalar> d_action =
      backward_heads(critic, tr.heads, std::span<const Matrix<Scalar>>(&d_head, 1), grads, &tr.enc, true);
  if (grads) backward_encoders(critic, tr.enc, *grads);
  return d_action;
}

/// Online and target copies of the actor and critic.
template <typename Scalar>
struct ParamStore {
  GatedNet<Scalar> actor;
  GatedNet<Scalar> critic;
  GatedNet<Scalar> target_actor;
  GatedNet<Scalar> target_critic;
  std::uint64_t sync_period = 1000;

  static ParamStore create(ArchitecturePtr actor_arch, ArchitecturePtr critic_arch, std::mt19937_64& rng) {
    ParamStore s;
    s.actor = GatedNet<Scalar>::create(std::move(actor_arch), rng);
    s.critic = GatedNet<Scalar>::create(std::move(critic_arch), rng);
    s.target_actor = s.actor;
    s.target_critic = s.critic;
    return s;
  }

  const GatedNet<Scalar>& critic_net(bool target) const { return target ? target_critic : critic; }
  const GatedNet<Scalar>& actor_net(bool target) const { return target ? target_actor : actor; }
};

template <typename Scalar>
RowVector<Scalar> critic_forward(const ParamStore<Scalar>& store, const ObservationBatch<Scalar>& obs,
                                 const std::type_identity_t<Matrix<Scalar>>& action, const TaskSpec& task, bool target) {
  return critic_forward(store.critic_net(target), obs, action, task);
}

/// Copies online parameters into the targets when `counter` is a positive
/// multiple of the sync period. Returns whether a copy happened.
template <typename Scalar>
bool sync_targets(ParamStore<Scalar>& store, std::uint64_t counter) {
  if (counter == 0 || store.sync_period == 0 || counter % store.sync_period != 0) return false;
  auto copy = [](const GatedNet<Scalar>& from, GatedNet<Scalar>& to) {
    const std::uint64_t v = to.params.version;
    to.params.tensors = from.params.tensors;
    to.params.version = v + 1;
  };
  copy(store.actor, store.target_actor);
  copy(store.critic, store.target_critic);
  return true;
}

}  // namespace sacx::gated
