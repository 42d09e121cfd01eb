#pragma once

#include "sacx/nn/layers.hpp"

#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace sacx::nn {

/// A shape-checked stack of layers. The network itself holds no parameter
/// values; those live in a ParameterSet and are passed to forward/backward.
class Network {
 public:
  Network() = default;
  Network(Index input_size, std::vector<LayerSpec> layers);

  Index input_size() const { return widths_.front(); }
  Index output_size() const { return widths_.back(); }
  /// Width of the activations entering layer `i` (i == layers().size() gives the output width).
  Index width_at(std::size_t i) const { return widths_[i]; }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t tensor_count() const { return offsets_.back(); }
  std::size_t tensor_offset(std::size_t layer) const { return offsets_[layer]; }
  std::uint64_t id() const { return id_; }

  /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
  template <typename Scalar>
  std::vector<Matrix<Scalar>> initialize(std::mt19937_64& rng) const;

  /// Shapes of every parameter tensor, in storage order.
  std::vector<std::pair<Index, Index>> tensor_shapes() const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Index> widths_{0};
  std::vector<std::size_t> offsets_{0};
  std::uint64_t id_ = 0;
};

/// Activation record of one forward call. Holds the input of every layer;
/// everything else the reverse pass needs is recomputed from those.
template <typename Scalar>
struct Tape {
  std::uint64_t network_id = 0;
  std::uint64_t params_version = 0;
  std::vector<Matrix<Scalar>> inputs;

  Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> output;
  Tape<Scalar> tape;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> im2col(const Conv2d& c, const Matrix<Scalar>& x) {
  const Index batch = x.cols();
  const Index oh = c.out_height(), ow = c.out_width(), positions = oh * ow;
  const Index k = c.kernel, hw = c.height * c.width;
  Matrix<Scalar> cols(c.patch_size(), batch * positions);
  for (Index b = 0; b < batch; ++b) {
    const Scalar* in = x.col(b).data();
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar* dst = cols.col(b * positions + oy * ow + ox).data();
        for (Index ch = 0; ch < c.in_channels; ++ch) {
          const Scalar* plane = in + ch * hw;
          for (Index ky = 0; ky < k; ++ky) {
            const Scalar* row = plane + (oy * c.stride + ky) * c.width + ox * c.stride;
            for (Index kx = 0; kx < k; ++kx) *dst++ = row[kx];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const Conv2d& c, const Matrix<Scalar>& cols, Matrix<Scalar>& dx) {
  const Index batch = dx.cols();
  const Index oh = c.out_height(), ow = c.out_width(), positions = oh * ow;
  const Index k = c.kernel, hw = c.height * c.width;
  for (Index b = 0; b < batch; ++b) {
    Scalar* out = dx.col(b).data();
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        const Scalar* src = cols.col(b * positions + oy * ow + ox).data();
        for (Index ch = 0; ch < c.in_channels; ++ch) {
          Scalar* plane = out + ch * hw;
          for (Index ky = 0; ky < k; ++ky) {
            Scalar* row = plane + (oy * c.stride + ky) * c.width + ox * c.stride;
            for (Index kx = 0; kx < k; ++kx) row[kx] += *src++;
          }
        }
      }
    }
  }
}

// Output rows are [out_channel][position]; the GEMM produces [out_channel] x [sample, position].
template <typename Scalar>
Matrix<Scalar> positions_to_columns(const Matrix<Scalar>& y, Index batch, Index positions) {
  const Index channels = y.rows();
  Matrix<Scalar> out(channels * positions, batch);
  for (Index b = 0; b < batch; ++b)
    Eigen::Map<Matrix<Scalar>>(out.col(b).data(), positions, channels) = y.middleCols(b * positions, positions).transpose();
  return out;
}

template <typename Scalar>
Matrix<Scalar> columns_to_positions(const Matrix<Scalar>& dy, Index channels, Index positions) {
  const Index batch = dy.cols();
  Matrix<Scalar> out(channels, batch * positions);
  for (Index b = 0; b < batch; ++b)
    out.middleCols(b * positions, positions) =
        Eigen::Map<const Matrix<Scalar>>(dy.col(b).data(), positions, channels).transpose();
  return out;
}

template <typename Scalar>
struct NormStats {
  Matrix<Scalar> normalized;
  RowVector<Scalar> inv_std;
};

template <typename Scalar>
NormStats<Scalar> normalize(const LayerNorm& ln, const Matrix<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.rows());
  RowVector<Scalar> mean = x.colwise().sum() / n;
  Matrix<Scalar> centered = x.rowwise() - mean;
  RowVector<Scalar> var = centered.colwise().squaredNorm() / n;
  RowVector<Scalar> inv_std = (var.array() + static_cast<Scalar>(ln.epsilon)).rsqrt().matrix();
  Matrix<Scalar> normalized = centered * inv_std.asDiagonal();
  return {std::move(normalized), std::move(inv_std)};
}

inline void check_input(const Network& net, Index rows) {
  if (rows != net.input_size())
    throw ShapeError("layer 0 (" + (net.layers().empty() ? std::string("input") : describe(net.layers().front())) +
                     "): expected input of size " + std::to_string(net.input_size()) + ", got " +
                     std::to_string(rows));
}

template <typename Scalar>
void check_params(const Network& net, ParamView<Scalar> params) {
  if (params.tensors.size() != net.tensor_count())
    throw ShapeError("network expects " + std::to_string(net.tensor_count()) + " parameter tensors, got " +
                     std::to_string(params.tensors.size()));
}

template <typename Scalar>
Matrix<Scalar> apply_layer(const LayerSpec& spec, ParamView<Scalar> p, std::size_t off, const Matrix<Scalar>& x) {
  return std::visit(
      [&](const auto& layer) -> Matrix<Scalar> {
        using L = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<L, Dense>) {
          return (p[off] * x).colwise() + p[off + 1].col(0);
        } else if constexpr (std::is_same_v<L, Conv2d>) {
          Matrix<Scalar> cols = im2col(layer, x);
          Matrix<Scalar> y = (p[off] * cols).colwise() + p[off + 1].col(0);
          return positions_to_columns(y, x.cols(), layer.out_height() * layer.out_width());
        } else if constexpr (std::is_same_v<L, LayerNorm>) {
          auto stats = normalize(layer, x);
          return (stats.normalized.array().colwise() * p[off].col(0).array()).matrix().colwise() + p[off + 1].col(0);
        } else {
          return activate(layer.kind, x);
        }
      },
      spec);
}

}  // namespace detail

/// Evaluates the network without recording a tape.
template <typename Scalar>
Matrix<Scalar> predict(const Network& net, ParamView<Scalar> params, const std::type_identity_t<Matrix<Scalar>>& input) {
  detail::check_input(net, input.rows());
  detail::check_params(net, params);
  Matrix<Scalar> x = input;
  for (std::size_t i = 0; i < net.layers().size(); ++i)
    x = detail::apply_layer(net.layers()[i], params, net.tensor_offset(i), x);
  return x;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const Network& net, ParamView<Scalar> params,
                              const std::type_identity_t<Matrix<Scalar>>& input) {
  detail::check_input(net, input.rows());
  detail::check_params(net, params);
  ForwardResult<Scalar> result;
  result.tape.network_id = net.id();
  result.tape.params_version = params.version;
  result.tape.inputs.reserve(net.layers().size());
  Matrix<Scalar> x = input;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    Matrix<Scalar> y = detail::apply_layer(net.layers()[i], params, net.tensor_offset(i), x);
    result.tape.inputs.push_back(std::move(x));
    x = std::move(y);
  }
  result.output = std::move(x);
  return result;
}

/// Reverse pass. Parameter gradients are accumulated (+=) into `param_grads`
/// when it is non-empty; the gradient w.r.t. the network input is returned
/// when `want_input_grad` is set (otherwise an empty matrix).
template <typename Scalar>
Matrix<Scalar> backward(const Network& net, ParamView<Scalar> params, const Tape<Scalar>& tape,
                        const std::type_identity_t<Matrix<Scalar>>& output_grad,
                        std::span<std::type_identity_t<Matrix<Scalar>>> param_grads,
                        bool want_input_grad = true) {
  if (tape.network_id != net.id() || tape.inputs.size() != net.layers().size())
    throw TapeError("tape was recorded by a different network");
  if (tape.params_version != params.version)
    throw TapeError("tape is stale: parameters changed since the forward pass");
  detail::check_params(net, params);
  if (!param_grads.empty() && param_grads.size() != net.tensor_count())
    throw ShapeError("gradient buffer has " + std::to_string(param_grads.size()) + " tensors, network has " +
                     std::to_string(net.tensor_count()));
  if (output_grad.rows() != net.output_size() || output_grad.cols() != tape.batch())
    throw ShapeError("output gradient shape does not match the tape");

  const bool want_params = !param_grads.empty();
  Matrix<Scalar> grad = output_grad;
  for (std::size_t li = net.layers().size(); li-- > 0;) {
    const Matrix<Scalar>& x = tape.inputs[li];
    const std::size_t off = net.tensor_offset(li);
    const bool need_dx = want_input_grad || li > 0;
    grad = std::visit(
        [&](const auto& layer) -> Matrix<Scalar> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Dense>) {
            if (want_params) {
              param_grads[off].noalias() += grad * x.transpose();
              param_grads[off + 1].col(0) += grad.rowwise().sum();
            }
            if (!need_dx) return {};
            return params[off].transpose() * grad;
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            const Index positions = layer.out_height() * layer.out_width();
            Matrix<Scalar> dy = detail::columns_to_positions(grad, layer.out_channels, positions);
            if (want_params) {
              Matrix<Scalar> cols = detail::im2col(layer, x);
              param_grads[off].noalias() += dy * cols.transpose();
              param_grads[off + 1].col(0) += dy.rowwise().sum();
            }
            if (!need_dx) return {};
            Matrix<Scalar> dcols = params[off].transpose() * dy;
            Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.rows(), x.cols());
            detail::col2im_add(layer, dcols, dx);
            return dx;
          } else if constexpr (std::is_same_v<L, LayerNorm>) {
            auto stats = detail::normalize(layer, x);
            if (want_params) {
              param_grads[off].col(0) += grad.cwiseProduct(stats.normalized).rowwise().sum();
              param_grads[off + 1].col(0) += grad.rowwise().sum();
            }
            if (!need_dx) return {};
            const Scalar n = static_cast<Scalar>(x.rows());
            Matrix<Scalar> dxhat = grad.array().colwise() * params[off].col(0).array();
            RowVector<Scalar> sum_d = dxhat.colwise().sum();
            RowVector<Scalar> sum_dx = dxhat.cwiseProduct(stats.normalized).colwise().sum();
            Matrix<Scalar> dx = (dxhat * n).rowwise() - sum_d;
            dx -= stats.normalized * sum_dx.asDiagonal();
            return dx * (stats.inv_std / n).asDiagonal();
          } else {
            if (!need_dx) return {};
            return grad.cwiseProduct(activation_derivative(layer.kind, x));
          }
        },
        net.layers()[li]);
  }
  return grad;
}

}  // namespace sacx::nn
