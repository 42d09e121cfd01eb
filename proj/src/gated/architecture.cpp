#include "sacx/gated/architecture.hpp"

#include <cmath>
#include <stdexcept>

namespace sacx::gated {

using nn::Activation;
using nn::ActivationLayer;
using nn::Conv2d;
using nn::Dense;
using nn::LayerNorm;
using nn::LayerSpec;

Index InputShapes::group_size(StateGroup g) const {
  switch (g) {
    case StateGroup::proprio:
      return proprio;
    case StateGroup::features:
      return features;
    case StateGroup::image:
      return image_channels * image_height * image_width;
  }
  return 0;
}

void NetworkSizes::validate() const {
  if (actor_group_width <= 0 || critic_group_width <= 0) throw std::invalid_argument("group widths must be positive");
  for (Index w : actor_trunk)
    if (w <= 0) throw std::invalid_argument("actor trunk sizes must be positive");
  for (Index w : critic_trunk)
    if (w <= 0) throw std::invalid_argument("critic trunk sizes must be positive");
  if (!(min_variance > 0.0) || !(max_variance > min_variance))
    throw std::invalid_argument("variance bounds must satisfy 0 < min < max");
}

namespace {

nn::Network vector_encoder(Index in, Index width) {
  return nn::Network(in, {Dense{in, width}, LayerNorm{width}, ActivationLayer{Activation::tanh}});
}

nn::Network image_encoder(const InputShapes& s, const NetworkSizes& z, Index width) {
  Conv2d c1{s.image_channels, z.conv_channels[0], s.image_height, s.image_width, z.conv_kernels[0], z.conv_strides[0]};
  Conv2d c2{z.conv_channels[0], z.conv_channels[1], c1.out_height(), c1.out_width(), z.conv_kernels[1],
            z.conv_strides[1]};
  return nn::Network(c1.in_size(), {c1, ActivationLayer{Activation::elu}, c2, ActivationLayer{Activation::elu},
                                    Dense{c2.out_size(), width}, LayerNorm{width}, ActivationLayer{Activation::tanh}});
}

nn::Network trunk_network(Index in, const std::vector<Index>& sizes) {
  std::vector<LayerSpec> layers;
  Index prev = in;
  for (Index w : sizes) {
    layers.push_back(Dense{prev, w});
    layers.push_back(ActivationLayer{Activation::elu});
    prev = w;
  }
  return nn::Network(in, std::move(layers));
}

}  // namespace

Architecture::Architecture(Role role, const InputShapes& shapes, const NetworkSizes& sizes, int task_count)
    : role_(role), shapes_(shapes), sizes_(sizes), task_count_(task_count) {
  sizes_.validate();
  if (task_count <= 0) throw std::invalid_argument("architecture needs at least one task");
  const bool actor = role == Role::actor;
  width_ = actor ? sizes_.actor_group_width : sizes_.critic_group_width;
  encoders_[0] = vector_encoder(shapes_.proprio, width_);
  encoders_[1] = vector_encoder(shapes_.features, width_);
  encoders_[2] = image_encoder(shapes_, sizes_, width_);
  const auto& trunk_sizes = actor ? sizes_.actor_trunk : sizes_.critic_trunk;
  trunk_ = trunk_network(actor ? width_ : width_ + shapes_.action_dim, trunk_sizes);
  const Index head_out = actor ? 2 * shapes_.action_dim : 1;
  head_ = nn::Network(trunk_.output_size(), {Dense{trunk_.output_size(), head_out}});

  std::size_t off = 0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    encoder_offsets_[g] = off;
    off += encoders_[g].tensor_count();
  }
  trunk_offset_ = off;
  head_offset_ = off + trunk_.tensor_count();
}

double Architecture::std_min() const { return std::sqrt(sizes_.min_variance); }
double Architecture::std_max() const { return std::sqrt(sizes_.max_variance); }

std::size_t Architecture::head_offset(int task) const {
  if (task < 0 || task >= task_count_)
    throw std::out_of_range("unknown task id " + std::to_string(task) + " (network has " +
                            std::to_string(task_count_) + " heads)");
  return head_offset_ + head_.tensor_count() * static_cast<std::size_t>(task);
}

template <typename Scalar>
ParameterSet<Scalar> Architecture::initialize(std::mt19937_64& rng) const {
  ParameterSet<Scalar> p;
  p.tensors.reserve(tensor_count());
  auto append = [&](const nn::Network& net) {
    for (auto& t : net.initialize<Scalar>(rng)) p.tensors.push_back(std::move(t));
  };
  for (const auto& e : encoders_) append(e);
  append(trunk_);
  for (int t = 0; t < task_count_; ++t) append(head_);
  return p;
}

template ParameterSet<float> Architecture::initialize<float>(std::mt19937_64&) const;
template ParameterSet<double> Architecture::initialize<double>(std::mt19937_64&) const;

}  // namespace sacx::gated
