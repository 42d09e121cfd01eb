#pragma once

#include "sacx/nn/types.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sacx::nn {

// Binary layout (native little-endian):
//   "SACXCKPT" | u32 version | u32 scalar bytes | u64 metadata length | metadata
//   u64 tensor count | per tensor: u64 name length | name | u64 rows | u64 cols | raw column-major data
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Matrix<Scalar>>> tensors;

  void add(const std::string& prefix, const ParameterSet<Scalar>& set) {
    for (std::size_t i = 0; i < set.tensors.size(); ++i) tensors.emplace_back(prefix + "/" + std::to_string(i), set.tensors[i]);
  }

  /// Restores tensors named `prefix/0..n-1` into `set`, which must already have the right shapes.
  void restore(const std::string& prefix, ParameterSet<Scalar>& set) const;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

}  // namespace sacx::nn
