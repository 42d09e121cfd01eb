#pragma once

#include "sacx/nn/types.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>

namespace sacx::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  std::int64_t step = 0;
  std::int64_t skipped = 0;

  AdamState() = default;
  AdamState(const ParameterSet<Scalar>& params, AdamConfig cfg) : config(cfg) {
    for (const auto& t : params.tensors) {
      first_moment.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
      second_moment.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
    }
  }
};

/// One bias-corrected Adam update. Returns false (and leaves params, moments
/// and step counter untouched) when any gradient entry is non-finite.
template <typename Scalar>
bool adam_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, AdamState<Scalar>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: parameter, gradient and state tensor counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.tensors[i].rows() != params.tensors[i].rows() || grads.tensors[i].cols() != params.tensors[i].cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch at tensor " + std::to_string(i));
  }
  if (!all_finite(grads)) {
    ++state.skipped;
    spdlog::warn("adam_step: non-finite gradient, update skipped (step {}, {} skipped so far)", state.step,
                 state.skipped);
    return false;
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, t));
  const Scalar lr = static_cast<Scalar>(c.learning_rate), eps = static_cast<Scalar>(c.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads.tensors[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    params.tensors[i].array() -=
        lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
  ++params.version;
  return true;
}

}  // namespace sacx::nn
