#pragma once

#include "sacx/learner/retrace.hpp"

#include <cmath>

namespace sacx::oracles {

/// Term-by-term evaluation of the retrace sum for one snippet column:
/// every (i, j) pair, explicit products of trace coefficients, no recursion.
inline Eigen::ArrayXd naive_retrace(const learner::RetraceInputs& in, Eigen::Index col,
                                    const learner::RetraceConfig& cfg) {
  const Eigen::Index n = in.rewards.rows();
  Eigen::ArrayXd out(n);
  const bool literal = cfg.trace_mode == learner::TraceMode::paper_literal;
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = literal ? 0.0 : in.q_target(i, col);
    for (Eigen::Index j = i; j < n; ++j) {
      double weight = std::pow(cfg.gamma, static_cast<double>(j - i));
      for (Eigen::Index k = literal ? i : i + 1; k <= j; ++k) weight *= in.trace(k, col);
      const bool term = in.terminal(j, col) > 0.5;
      double bootstrap = term ? 0.0 : cfg.gamma * in.v_next(j, col);
      if (!cfg.bootstrap && j == n - 1) bootstrap = 0.0;
      sum += weight * (in.rewards(j, col) + bootstrap - in.q_target(j, col));
      if (term) break;
    }
    out(i) = sum;
  }
  return out;
}

}  // namespace sacx::oracles
