#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sacx::learner {

enum class TraceMode {
  // Q^ret_i = sum_j gamma^(j-i) (prod_{k=i..j} c_k) [r_j + gamma V'(s_{j+1}) - Q'(s_j, a_j)]
  paper_literal,
  // Q^ret_i = Q'(s_i, a_i) + sum_j gamma^(j-i) (prod_{k=i+1..j} c_k) [r_j + gamma V'(s_{j+1}) - Q'(s_j, a_j)]
  standard_first_step_one,
};

std::string to_string(TraceMode m);
TraceMode parse_trace_mode(const std::string& s);

struct RetraceConfig {
  double gamma = 0.99;
  TraceMode trace_mode = TraceMode::standard_first_step_one;
  int expectation_samples = 1;
  double entropy_weight = 1e-3;
  bool bootstrap = true;  // bootstrap from V'(s_n) at the window end

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
    if (expectation_samples < 1) throw std::invalid_argument("expectation_samples must be at least 1");
    if (!(entropy_weight >= 0.0)) throw std::invalid_argument("entropy weight must be non-negative");
  }
  bool operator==(const RetraceConfig&) const = default;
};

/// Inputs for one task over a batch of snippets; every array is
/// (snippet length) x (batch), time along rows.
struct RetraceInputs {
  Eigen::ArrayXXd rewards;      // r_T(s_j, a_j)
  Eigen::ArrayXXd q_target;     // Q'(s_j, a_j)
  Eigen::ArrayXXd v_next;       // E_{pi'} Q'(s_{j+1}, .)
  Eigen::ArrayXXd trace;        // c_j = min(1, pi'(a_j|s_j) / b(a_j|s_j))
  Eigen::ArrayXXd terminal;     // 1 where s_{j+1} is terminal
};

/// c = min(1, exp(log_pi - log_b)).
inline Eigen::ArrayXXd trace_coefficients(const Eigen::ArrayXXd& log_pi, const Eigen::ArrayXXd& log_b) {
  return (log_pi - log_b).min(0.0).exp();
}

/// Retrace regression targets for every start index, computed by a single
/// backward sweep over time applied to all snippets at once.
inline Eigen::ArrayXXd retrace_targets(const RetraceInputs& in, const RetraceConfig& cfg) {
  const Eigen::Index n = in.rewards.rows(), b = in.rewards.cols();
  auto same = [&](const Eigen::ArrayXXd& a) { return a.rows() == n && a.cols() == b; };
  if (!same(in.q_target) || !same(in.v_next) || !same(in.trace) || !same(in.terminal))
    throw std::invalid_argument("retrace inputs differ in shape");
  const double g = cfg.gamma;
  Eigen::ArrayXXd continues = 1.0 - in.terminal;
  Eigen::ArrayXXd delta = in.rewards + g * continues * in.v_next - in.q_target;
  if (!cfg.bootstrap) delta.row(n - 1) -= g * continues.row(n - 1) * in.v_next.row(n - 1);

  Eigen::ArrayXXd out(n, b);
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(b);  // correction sum from step i+1 on, before its trace weight
  if (cfg.trace_mode == TraceMode::paper_literal) {
    // A_i = c_i (delta_i + gamma (1 - term_i) A_{i+1})
    for (Eigen::Index i = n; i-- > 0;) {
      acc = in.trace.row(i).transpose() * (delta.row(i).transpose() + g * continues.row(i).transpose() * acc);
      out.row(i) = acc.transpose();
    }
  } else {
    // B_i = delta_i + gamma (1 - term_i) c_{i+1} B_{i+1}
    for (Eigen::Index i = n; i-- > 0;) {
      Eigen::ArrayXd next = i + 1 < n ? Eigen::ArrayXd(in.trace.row(i + 1).transpose() * acc) : Eigen::ArrayXd::Zero(b);
      acc = delta.row(i).transpose() + g * continues.row(i).transpose() * next;
      out.row(i) = (in.q_target.row(i).transpose() + acc).transpose();
    }
  }
  return out;
}

}  // namespace sacx::learner
