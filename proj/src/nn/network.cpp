#include "sacx/nn/network.hpp"

#include <atomic>
#include <sstream>

namespace sacx::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::elu:
      return "elu";
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
    case Activation::identity:
      return "identity";
  }
  return "unknown";
}

std::string describe(const LayerSpec& layer) {
  std::ostringstream os;
  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          os << "dense " << l.in << "->" << l.out;
        } else if constexpr (std::is_same_v<L, Conv2d>) {
          os << "conv2d " << l.in_channels << "x" << l.height << "x" << l.width << " k" << l.kernel << " s"
             << l.stride << " ->" << l.out_channels;
        } else if constexpr (std::is_same_v<L, LayerNorm>) {
          os << "layer_norm " << l.size;
        } else {
          os << "activation " << to_string(l.kind);
        }
      },
      layer);
  return os.str();
}

namespace {

std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

[[noreturn]] void reject(std::size_t index, const LayerSpec& layer, const std::string& what) {
  throw ShapeError("layer " + std::to_string(index) + " (" + describe(layer) + "): " + what);
}

}  // namespace

Network::Network(Index input_size, std::vector<LayerSpec> layers) : layers_(std::move(layers)), id_(next_network_id()) {
  if (input_size <= 0) throw ShapeError("network input size must be positive");
  widths_ = {input_size};
  offsets_ = {0};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Index w = widths_.back();
    Index next = w;
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            if (l.in <= 0 || l.out <= 0) reject(i, layers_[i], "dense sizes must be positive");
            if (l.in != w) reject(i, layers_[i], "expects input " + std::to_string(l.in) + ", got " + std::to_string(w));
            next = l.out;
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            if (l.kernel <= 0 || l.stride <= 0) reject(i, layers_[i], "kernel and stride must be positive");
            if (l.in_channels <= 0 || l.out_channels <= 0) reject(i, layers_[i], "channel counts must be positive");
            if (l.kernel > l.height || l.kernel > l.width) reject(i, layers_[i], "kernel larger than the image");
            if (l.in_size() != w)
              reject(i, layers_[i], "expects input " + std::to_string(l.in_size()) + ", got " + std::to_string(w));
            next = l.out_size();
          } else if constexpr (std::is_same_v<L, LayerNorm>) {
            if (l.size != w) reject(i, layers_[i], "expects input " + std::to_string(l.size) + ", got " + std::to_string(w));
            if (!(l.epsilon > 0.0)) reject(i, layers_[i], "epsilon must be positive");
          }
        },
        layers_[i]);
    widths_.push_back(next);
    offsets_.push_back(offsets_.back() + nn::tensor_count(layers_[i]));
  }
}

std::vector<std::pair<Index, Index>> Network::tensor_shapes() const {
  std::vector<std::pair<Index, Index>> shapes;
  for (const auto& layer : layers_) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            shapes.emplace_back(l.out, l.in);
            shapes.emplace_back(l.out, 1);
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            shapes.emplace_back(l.out_channels, l.patch_size());
            shapes.emplace_back(l.out_channels, 1);
          } else if constexpr (std::is_same_v<L, LayerNorm>) {
            shapes.emplace_back(l.size, 1);
            shapes.emplace_back(l.size, 1);
          }
        },
        layer);
  }
  return shapes;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> Network::initialize(std::mt19937_64& rng) const {
  std::vector<Matrix<Scalar>> out;
  out.reserve(tensor_count());
  auto uniform = [&](Index rows, Index cols, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<Scalar> m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
    return m;
  };
  for (const auto& layer : layers_) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            out.push_back(uniform(l.out, l.in, static_cast<double>(l.in)));
            out.push_back(Matrix<Scalar>::Zero(l.out, 1));
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            out.push_back(uniform(l.out_channels, l.patch_size(), static_cast<double>(l.patch_size())));
            out.push_back(Matrix<Scalar>::Zero(l.out_channels, 1));
          } else if constexpr (std::is_same_v<L, LayerNorm>) {
            out.push_back(Matrix<Scalar>::Ones(l.size, 1));
            out.push_back(Matrix<Scalar>::Zero(l.size, 1));
          }
        },
        layer);
  }
  return out;
}

template std::vector<Matrix<float>> Network::initialize<float>(std::mt19937_64&) const;
template std::vector<Matrix<double>> Network::initialize<double>(std::mt19937_64&) const;

}  // namespace sacx::nn
