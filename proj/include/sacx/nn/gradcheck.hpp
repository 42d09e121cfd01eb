#pragma once

#include "sacx/nn/network.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace sacx::nn {

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference gradient of `loss` with respect to every entry of
/// `params` (or a random subset of at most `max_entries_per_tensor` entries
/// per tensor when that is positive). Entries not probed are left at zero and
/// their coordinates are not reported in `probed`.
struct ProbedEntry {
  std::size_t tensor;
  Index row;
  Index col;
  double numeric;
};

inline std::vector<ProbedEntry> numeric_gradient(ParameterSet<double>& params, const std::function<double()>& loss,
                                                 double eps, Index max_entries_per_tensor = 0,
                                                 std::uint64_t seed = 7) {
  std::vector<ProbedEntry> out;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& m = params.tensors[t];
    std::vector<Index> entries(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.size(); ++i) entries[static_cast<std::size_t>(i)] = i;
    if (max_entries_per_tensor > 0 && m.size() > max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(max_entries_per_tensor));
    }
    for (Index flat : entries) {
      double& value = m.data()[flat];
      const double saved = value;
      value = saved + eps;
      ++params.version;
      const double up = loss();
      value = saved - eps;
      ++params.version;
      const double down = loss();
      value = saved;
      ++params.version;
      out.push_back({t, flat % m.rows(), flat / m.rows(), (up - down) / (2.0 * eps)});
    }
  }
  return out;
}

/// Maximum relative error between analytic and central-difference gradients
/// of a fixed random projection of the network output. 64-bit only.
inline double finite_diff_check(const Network& net, ParameterSet<double>& params, const Matrix<double>& input,
                                double eps = 1e-5, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix<double> projection(net.output_size(), input.cols());
  for (Index i = 0; i < projection.size(); ++i) projection.data()[i] = normal(rng);

  auto loss = [&]() { return predict(net, view(params), input).cwiseProduct(projection).sum(); };
  auto fwd = forward(net, view(params), input);
  ParameterSet<double> grads = params.zeros_like();
  backward(net, view(params), fwd.tape, projection, std::span<Matrix<double>>(grads.tensors), false);

  double worst = 0.0;
  for (const auto& e : numeric_gradient(params, loss, eps))
    worst = std::max(worst, relative_error(grads.tensors[e.tensor](e.row, e.col), e.numeric));
  return worst;
}

/// Same projection loss, checked against the input gradient.
inline double finite_diff_check_input(const Network& net, const ParameterSet<double>& params, Matrix<double> input,
                                      double eps = 1e-5, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix<double> projection(net.output_size(), input.cols());
  for (Index i = 0; i < projection.size(); ++i) projection.data()[i] = normal(rng);
  auto fwd = forward(net, view(params), input);
  Matrix<double> analytic = backward(net, view(params), fwd.tape, projection, std::span<Matrix<double>>{}, true);
  double worst = 0.0;
  for (Index i = 0; i < input.size(); ++i) {
    const double saved = input.data()[i];
    input.data()[i] = saved + eps;
    const double up = predict(net, view(params), input).cwiseProduct(projection).sum();
    input.data()[i] = saved - eps;
    const double down = predict(net, view(params), input).cwiseProduct(projection).sum();
    input.data()[i] = saved;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace sacx::nn
