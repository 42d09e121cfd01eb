#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace sacx {

using Index = Eigen::Index;

// Batches are stored one sample per column.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// A flat list of parameter tensors. `version` is bumped on every mutation so
/// that tapes recorded against older values can be detected.
template <typename Scalar>
struct ParameterSet {
  std::vector<Matrix<Scalar>> tensors;
  std::uint64_t version = 0;

  std::size_t size() const { return tensors.size(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
    return out;
  }

  void set_zero() {
    for (auto& t : tensors) t.setZero();
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    out.version = version;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<Other>());
    return out;
  }
};

/// Read-only window onto a contiguous run of tensors in a ParameterSet.
template <typename Scalar>
struct ParamView {
  std::span<const Matrix<Scalar>> tensors;
  std::uint64_t version = 0;

  const Matrix<Scalar>& operator[](std::size_t i) const { return tensors[i]; }
};

template <typename Scalar>
ParamView<Scalar> view(const ParameterSet<Scalar>& set, std::size_t offset, std::size_t count) {
  return {std::span<const Matrix<Scalar>>(set.tensors).subspan(offset, count), set.version};
}

template <typename Scalar>
ParamView<Scalar> view(const ParameterSet<Scalar>& set) {
  return {std::span<const Matrix<Scalar>>(set.tensors), set.version};
}

template <typename Scalar>
std::span<Matrix<Scalar>> grad_span(ParameterSet<Scalar>& set, std::size_t offset, std::size_t count) {
  return std::span<Matrix<Scalar>>(set.tensors).subspan(offset, count);
}

template <typename Scalar>
bool all_finite(const ParameterSet<Scalar>& set) {
  for (const auto& t : set.tensors)
    if (!t.allFinite()) return false;
  return true;
}

template <typename Scalar>
double squared_norm(const ParameterSet<Scalar>& set) {
  double s = 0.0;
  for (const auto& t : set.tensors) s += static_cast<double>(t.squaredNorm());
  return s;
}

}  // namespace sacx
