#include "sacx/learner/learner.hpp"

namespace sacx::learner {

std::string to_string(TraceMode m) {
  return m == TraceMode::paper_literal ? "paper_literal" : "standard_first_step_one";
}

TraceMode parse_trace_mode(const std::string& s) {
  if (s == "paper_literal") return TraceMode::paper_literal;
  if (s == "standard_first_step_one") return TraceMode::standard_first_step_one;
  throw std::invalid_argument("unknown trace mode '" + s + "' (expected paper_literal or standard_first_step_one)");
}

void LearnerConfig::validate() const {
  retrace.validate();
  if (batch_size == 0 || snippet_length == 0) throw std::invalid_argument("batch size and snippet length must be positive");
  if (!(adam.learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
}

std::map<std::array<bool, gated::kGroupCount>, FilterGroup> group_by_filter(const std::vector<TaskSpec>& tasks,
                                                                            bool policy) {
  std::map<std::array<bool, gated::kGroupCount>, FilterGroup> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& g = out[(policy ? tasks[i].policy_filter : tasks[i].critic_filter).enabled];
    g.positions.push_back(i);
    g.ids.push_back(tasks[i].task_id);
  }
  return out;
}

FilterVector groups_needed(const std::vector<TaskSpec>& tasks) {
  std::vector<FilterVector> all;
  for (const auto& t : tasks) {
    all.push_back(t.policy_filter);
    all.push_back(t.critic_filter);
  }
  return gated::union_of(all);
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  if (fresh) out_ << "step,task,critic_loss,policy_objective,entropy,grad_norm\n";
}

void MetricsCsv::write(const LearnerMetrics& m) {
  if (m.waited) return;
  for (std::size_t t = 0; t < m.critic_loss.size(); ++t)
    out_ << m.step << ',' << t << ',' << m.critic_loss[t] << ',' << m.policy_objective[t] << ',' << m.entropy << ','
         << m.critic_grad_norm << '\n';
  out_ << m.step << ",-1,,," << m.entropy << ',' << m.actor_grad_norm << '\n';
}

}  // namespace sacx::learner
