#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace sacx::gated {

enum class StateGroup : std::size_t { proprio = 0, features = 1, image = 2 };
inline constexpr std::size_t kGroupCount = 3;
inline constexpr std::array<StateGroup, kGroupCount> kAllGroups = {StateGroup::proprio, StateGroup::features,
                                                                   StateGroup::image};

std::string to_string(StateGroup g);
StateGroup parse_state_group(const std::string& name);

/// Binary per-task mask over the three state groups.
struct FilterVector {
  std::array<bool, kGroupCount> enabled{};

  bool operator[](StateGroup g) const { return enabled[static_cast<std::size_t>(g)]; }
  bool& operator[](StateGroup g) { return enabled[static_cast<std::size_t>(g)]; }
  bool operator==(const FilterVector&) const = default;

  /// proprio plus at least one of features / image.
  bool is_markov() const { return (*this)[StateGroup::proprio] && ((*this)[StateGroup::features] || (*this)[StateGroup::image]); }

  static FilterVector of(bool proprio, bool features, bool image) { return FilterVector{{proprio, features, image}}; }
  static FilterVector feature_space() { return of(true, true, false); }
  static FilterVector pixel_space() { return of(true, false, true); }
};

std::string to_string(const FilterVector& f);

/// One intention: a reward paired with the state groups its policy and critic see.
struct TaskSpec {
  int task_id = 0;
  int reward_id = 5;
  FilterVector policy_filter = FilterVector::feature_space();
  FilterVector critic_filter = FilterVector::feature_space();

  /// "5F" / "5P" style name; "5?" for filters that are neither canonical space.
  std::string name() const;
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Parses "5F" (features) or "5P" (pixels); policy and critic filters match.
TaskSpec parse_task_name(const std::string& name, int task_id);

/// Union of groups any of the given filters enables.
FilterVector union_of(const std::vector<FilterVector>& filters);

}  // namespace sacx::gated
