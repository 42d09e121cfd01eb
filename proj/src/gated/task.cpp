#include "sacx/gated/task.hpp"

#include <stdexcept>

namespace sacx::gated {

std::string to_string(StateGroup g) {
  switch (g) {
    case StateGroup::proprio:
      return "proprio";
    case StateGroup::features:
      return "features";
    case StateGroup::image:
      return "image";
  }
  return "unknown";
}

StateGroup parse_state_group(const std::string& name) {
  if (name == "proprio") return StateGroup::proprio;
  if (name == "features") return StateGroup::features;
  if (name == "image" || name == "pixels") return StateGroup::image;
  throw std::invalid_argument("unknown state group '" + name + "' (expected proprio, features or image)");
}

std::string to_string(const FilterVector& f) {
  std::string s = "[";
  for (std::size_t i = 0; i < kGroupCount; ++i) s += (i ? "," : "") + std::string(f.enabled[i] ? "1" : "0");
  return s + "]";
}

std::string TaskSpec::name() const {
  std::string suffix = "?";
  if (policy_filter == FilterVector::feature_space()) suffix = "F";
  if (policy_filter == FilterVector::pixel_space()) suffix = "P";
  return std::to_string(reward_id) + suffix;
}

void TaskSpec::validate() const {
  if (reward_id < 1 || reward_id > 8)
    throw std::invalid_argument("task " + std::to_string(task_id) + ": reward id " + std::to_string(reward_id) +
                                " outside 1..8");
  if (!policy_filter.is_markov())
    throw std::invalid_argument("task " + std::to_string(task_id) + ": policy filter " + to_string(policy_filter) +
                                " must enable proprio and at least one of features/image");
  if (!critic_filter.is_markov())
    throw std::invalid_argument("task " + std::to_string(task_id) + ": critic filter " + to_string(critic_filter) +
                                " must enable proprio and at least one of features/image");
}

TaskSpec parse_task_name(const std::string& name, int task_id) {
  if (name.size() != 2 || name[0] < '1' || name[0] > '8' || (name[1] != 'F' && name[1] != 'P'))
    throw std::invalid_argument("task name '" + name + "' must be a reward id 1-8 followed by F or P");
  TaskSpec t;
  t.task_id = task_id;
  t.reward_id = name[0] - '0';
  t.policy_filter = name[1] == 'F' ? FilterVector::feature_space() : FilterVector::pixel_space();
  t.critic_filter = t.policy_filter;
  return t;
}

FilterVector union_of(const std::vector<FilterVector>& filters) {
  FilterVector u;
  for (const auto& f : filters)
    for (std::size_t i = 0; i < kGroupCount; ++i) u.enabled[i] = u.enabled[i] || f.enabled[i];
  return u;
}

}  // namespace sacx::gated
