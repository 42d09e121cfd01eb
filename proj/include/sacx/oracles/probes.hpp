#pragma once

#include "sacx/gated/networks.hpp"
#include "sacx/nn/gradcheck.hpp"

#include <random>

namespace sacx::oracles {

inline Matrix<double> gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Matrix<double> uniform_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Small shapes that still exercise every layer kind of the gated nets.
inline gated::InputShapes tiny_shapes() {
  gated::InputShapes s;
  s.proprio = 3;
  s.features = 4;
  s.image_channels = 2;
  s.image_height = 9;
  s.image_width = 9;
  s.action_dim = 2;
  return s;
}

inline gated::NetworkSizes tiny_sizes() {
  gated::NetworkSizes z;
  z.actor_group_width = 5;
  z.critic_group_width = 6;
  z.actor_trunk = {6, 5};
  z.critic_trunk = {7, 6};
  z.conv_channels = {3, 2};
  return z;
}

inline gated::ObservationBatch<double> random_batch(const gated::InputShapes& s, Index batch, std::mt19937_64& rng) {
  gated::ObservationBatch<double> b;
  b.batch = batch;
  for (auto g : gated::kAllGroups) b[g] = gaussian_matrix(s.group_size(g), batch, rng);
  b[gated::StateGroup::image] = uniform_matrix(s.group_size(gated::StateGroup::image), batch, rng, 0.0, 1.0);
  return b;
}

// Perturbs every parameter so zero biases and unit gains are not special.
inline void jitter(ParameterSet<double>& p, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : p.tensors)
    for (Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
}

/// Max relative error of the analytic gradient of a random projection of the
/// actor's (mean, std) output, over all (or a sample of) parameters.
inline double actor_gradient_error(gated::GatedNet<double>& actor, const gated::ObservationBatch<double>& obs,
                                   const gated::TaskSpec& task, std::mt19937_64& rng, Index max_entries = 0) {
  const Index d = actor.arch->action_dim();
  Matrix<double> pm = gaussian_matrix(d, obs.batch, rng), ps = gaussian_matrix(d, obs.batch, rng);
  auto tr = gated::actor_forward_traced(actor, obs, task);
  ParameterSet<double> grads = actor.params.zeros_like();
  gated::actor_backward(actor, tr, pm, ps, grads);
  auto loss = [&]() {
    auto p = gated::actor_forward(actor, obs, task);
    return p.mean.cwiseProduct(pm).sum() + p.std.cwiseProduct(ps).sum();
  };
  double worst = 0.0;
  for (const auto& e : nn::numeric_gradient(actor.params, loss, 1e-5, max_entries, rng()))
    worst = std::max(worst, nn::relative_error(grads.tensors[e.tensor](e.row, e.col), e.numeric));
  return worst;
}

inline double critic_gradient_error(gated::GatedNet<double>& critic, const gated::ObservationBatch<double>& obs,
                                    const Matrix<double>& action, const gated::TaskSpec& task, std::mt19937_64& rng,
                                    Index max_entries = 0, double* action_error = nullptr) {
  RowVector<double> pq = gaussian_matrix(1, obs.batch, rng);
  auto tr = gated::critic_forward_traced(critic, obs, action, task);
  ParameterSet<double> grads = critic.params.zeros_like();
  Matrix<double> d_action = gated::critic_backward(critic, tr, pq, &grads);
  auto loss_at = [&](const Matrix<double>& a) { return gated::critic_forward(critic, obs, a, task).dot(pq); };
  auto loss = [&]() { return loss_at(action); };
  double worst = 0.0;
  for (const auto& e : nn::numeric_gradient(critic.params, loss, 1e-5, max_entries, rng()))
    worst = std::max(worst, nn::relative_error(grads.tensors[e.tensor](e.row, e.col), e.numeric));
  if (action_error) {
    Matrix<double> a = action;
    double aw = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
      const double saved = a.data()[i];
      a.data()[i] = saved + 1e-5;
      const double up = loss_at(a);
      a.data()[i] = saved - 1e-5;
      const double down = loss_at(a);
      a.data()[i] = saved;
      aw = std::max(aw, nn::relative_error(d_action.data()[i], (up - down) / 2e-5));
    }
    *action_error = aw;
  }
  return worst;
}

}  // namespace sacx::oracles
