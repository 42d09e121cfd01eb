#pragma once

#include "sacx/learner/retrace.hpp"

#include <cstdint>
#include <string>

namespace sacx::oracles {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest observed error
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;

  std::string summary() const;
};

/// Central differences against backprop for every layer kind (dense, conv,
/// layer norm, each activation), parameters and inputs, 64-bit.
CheckResult check_layer_gradients(int trials = 20, std::uint64_t seed = 1);

/// Central differences against backprop for whole gated actors and critics
/// over random filter configurations: every parameter of small instances,
/// plus sampled entries of instances at the default sizes.
CheckResult check_network_gradients(int instances = 20, int full_size_instances = 2, std::uint64_t seed = 2);

/// Vectorized retrace targets against the term-by-term sum on random
/// snippets of lengths 1..20 with random terminals.
CheckResult check_retrace(learner::TraceMode mode, int snippets = 150, std::uint64_t seed = 3);

/// For every pair of Markov policy/critic filters: perturbing a disabled
/// group leaves actor and critic outputs and both losses bit-identical and
/// gives exactly zero gradient to that group's encoder.
CheckResult check_gating_invariance(std::uint64_t seed = 4);

}  // namespace sacx::oracles
