#pragma once

#include "sacx/nn/types.hpp"

#include <cmath>
#include <concepts>
#include <string>
#include <variant>

namespace sacx::nn {

enum class Activation { elu, tanh, softplus, identity };

std::string to_string(Activation a);

struct Dense {
  Index in = 0;
  Index out = 0;
};

/// Valid (unpadded) 2-D convolution over a [channel][row][col] column layout.
struct Conv2d {
  Index in_channels = 0;
  Index out_channels = 0;
  Index height = 0;
  Index width = 0;
  Index kernel = 0;
  Index stride = 1;

  Index out_height() const { return (height - kernel) / stride + 1; }
  Index out_width() const { return (width - kernel) / stride + 1; }
  Index in_size() const { return in_channels * height * width; }
  Index out_size() const { return out_channels * out_height() * out_width(); }
  Index patch_size() const { return in_channels * kernel * kernel; }
};

struct LayerNorm {
  Index size = 0;
  double epsilon = 1e-6;
};

struct ActivationLayer {
  Activation kind = Activation::identity;
};

using LayerSpec = std::variant<Dense, Conv2d, LayerNorm, ActivationLayer>;

std::string describe(const LayerSpec& layer);

/// Number of parameter tensors a layer owns (weights, bias / gain, offset).
inline std::size_t tensor_count(const LayerSpec& layer) {
  return std::holds_alternative<ActivationLayer>(layer) ? 0 : 2;
}

// Scalar activation functions and derivatives expressed on Eigen arrays.

template <typename Derived>
auto elu(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x > S(0)).select(x, x.exp() - S(1));
}

template <typename Derived>
auto elu_derivative(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x > S(0)).select(Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>::Ones(x.rows(), x.cols()), x.exp());
}

template <typename Derived>
auto softplus(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.max(S(0)) + (-x.abs()).exp().log1p();
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return S(1) / (S(1) + (-x).exp());
}

template <std::floating_point Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Matrix<Scalar> activate(Activation kind, const Matrix<Scalar>& x) {
  switch (kind) {
    case Activation::elu:
      return elu(x.array()).matrix();
    case Activation::tanh:
      return x.array().tanh().matrix();
    case Activation::softplus:
      return softplus(x.array()).matrix();
    case Activation::identity:
      break;
  }
  return x;
}

/// dY/dX evaluated at the pre-activation input X.
template <typename Scalar>
Matrix<Scalar> activation_derivative(Activation kind, const Matrix<Scalar>& x) {
  switch (kind) {
    case Activation::elu:
      return elu_derivative(x.array()).matrix();
    case Activation::tanh:
      return (Scalar(1) - x.array().tanh().square()).matrix();
    case Activation::softplus:
      return sigmoid(x.array()).matrix();
    case Activation::identity:
      break;
  }
  return Matrix<Scalar>::Ones(x.rows(), x.cols());
}

}  // namespace sacx::nn
