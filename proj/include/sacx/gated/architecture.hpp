#pragma once

#include "sacx/gated/task.hpp"
#include "sacx/nn/network.hpp"

#include <memory>
#include <random>

namespace sacx::gated {

enum class Role { actor, critic };

struct InputShapes {
  Index proprio = 8;
  Index features = 8;
  Index image_channels = 3;
  Index image_height = 32;
  Index image_width = 32;
  Index action_dim = 2;

  Index group_size(StateGroup g) const;
};

struct NetworkSizes {
  Index actor_group_width = 100;
  Index critic_group_width = 200;
  std::vector<Index> actor_trunk{200, 200};
  std::vector<Index> critic_trunk{400, 400};
  std::array<Index, 2> conv_channels{16, 16};
  std::array<Index, 2> conv_kernels{4, 3};
  std::array<Index, 2> conv_strides{2, 2};
  double min_variance = 1e-2;
  double max_variance = 1.0;

  void validate() const;
  bool operator==(const NetworkSizes&) const = default;
};

/// Layer stacks and parameter layout of a gated actor or critic:
/// three group encoders, a shared trunk and one output head per task.
/// Parameter tensors are stored in that order in a single ParameterSet.
class Architecture {
 public:
  Architecture(Role role, const InputShapes& shapes, const NetworkSizes& sizes, int task_count);

  Role role() const { return role_; }
  const InputShapes& shapes() const { return shapes_; }
  const NetworkSizes& sizes() const { return sizes_; }
  int task_count() const { return task_count_; }
  Index embedding_width() const { return width_; }
  Index action_dim() const { return shapes_.action_dim; }
  double std_min() const;
  double std_max() const;

  const nn::Network& encoder(StateGroup g) const { return encoders_[static_cast<std::size_t>(g)]; }
  const nn::Network& trunk() const { return trunk_; }
  const nn::Network& head() const { return head_; }

  std::size_t encoder_offset(StateGroup g) const { return encoder_offsets_[static_cast<std::size_t>(g)]; }
  std::size_t trunk_offset() const { return trunk_offset_; }
  /// Throws std::out_of_range for an unknown task id.
  std::size_t head_offset(int task) const;
  std::size_t tensor_count() const { return head_offset_ + head_.tensor_count() * task_count_; }

  template <typename Scalar>
  ParameterSet<Scalar> initialize(std::mt19937_64& rng) const;

 private:
  Role role_;
  InputShapes shapes_;
  NetworkSizes sizes_;
  int task_count_;
  Index width_;
  std::array<nn::Network, kGroupCount> encoders_;
  nn::Network trunk_;
  nn::Network head_;
  std::array<std::size_t, kGroupCount> encoder_offsets_{};
  std::size_t trunk_offset_ = 0;
  std::size_t head_offset_ = 0;
};

using ArchitecturePtr = std::shared_ptr<const Architecture>;

/// Parameter values bound to an architecture. Copies share the architecture.
template <typename Scalar>
struct GatedNet {
  ArchitecturePtr arch;
  ParameterSet<Scalar> params;

  static GatedNet create(ArchitecturePtr a, std::mt19937_64& rng) {
    GatedNet n{std::move(a), {}};
    n.params = n.arch->template initialize<Scalar>(rng);
    return n;
  }

  ParamView<Scalar> encoder_view(StateGroup g) const {
    return view(params, arch->encoder_offset(g), arch->encoder(g).tensor_count());
  }
  ParamView<Scalar> trunk_view() const { return view(params, arch->trunk_offset(), arch->trunk().tensor_count()); }
  ParamView<Scalar> head_view(int task) const {
    return view(params, arch->head_offset(task), arch->head().tensor_count());
  }

  template <typename Other>
  GatedNet<Other> cast() const {
    return {arch, params.template cast<Other>()};
  }
};

}  // namespace sacx::gated
