#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segan/layers.hpp"

namespace segan {

enum class NetKind { segmentor, critic };

/// Declarative description of a segmentor or critic.
///
/// The encoder schedule doubles from base_feature_maps unless given
/// explicitly. Segmentor decoder blocks mirror it: up block j emits
/// schedule[down_blocks - 2 - j] maps, the last one schedule[0].
struct NetSpec {
  NetKind kind = NetKind::segmentor;
  int in_channels = 3;
  int out_channels = 3;  // segmentor only: label classes
  int down_blocks = 4;
  int up_blocks = 4;  // segmentor only
  int base_feature_maps = 64;
  std::vector<int> feature_map_schedule;

  static NetSpec segmentor(int in_channels, int classes, int base_feature_maps = 64);
  static NetSpec critic(int in_channels, int base_feature_maps = 64);

  /// Explicit schedule if set, else base * 2^i.
  std::vector<int> schedule() const;
  void validate() const;
};

template <typename T>
struct ConvBlock {
  ConvParams<T> conv;
  std::optional<BatchNormParams<T>> bn;
};

template <typename T>
struct NamedTensor {
  std::string name;
  std::string role;  // weight|bias|bn_gamma|bn_beta|bn_running_mean|bn_running_var
  Tensor<T>* tensor;
};

template <typename T>
struct NetParams {
  NetSpec spec;
  std::vector<ConvBlock<T>> down;
  std::vector<ConvBlock<T>> up;
  std::optional<ConvParams<T>> head;

  /// Learned tensors in a fixed order (block by block, weight/bias/gamma/beta).
  std::vector<Tensor<T>*> parameters();
  /// Learned tensors plus batch-norm running statistics, for checkpoints.
  std::vector<NamedTensor<T>> named_tensors();
  void set_bn_mode(BnMode mode);
  void zero_grad();
};

/// Conv weights ~ Normal(0, 0.02), biases 0, BN gamma 1 / beta 0. Deterministic per seed.
template <typename T>
NetParams<T> init_params(const NetSpec& spec, std::uint64_t seed);

template <typename T>
NetParams<T> build_segmentor(const NetSpec& spec, std::uint64_t seed);

template <typename T>
NetParams<T> build_critic(const NetSpec& spec, std::uint64_t seed);

struct ForwardOptions {
  /// Parameters enter the graph as trainable leaves; otherwise they are frozen.
  bool trainable = true;
  /// Train-mode batch norm folds batch statistics into the running estimates.
  bool update_running_stats = true;
  /// Replace the encoder output feeding skip connection k with zeros (wiring diagnostics).
  int ablate_skip = -1;
};

/// Per-class sigmoid probabilities, same spatial size as x.
template <typename T>
Var<T> segmentor_forward(NetParams<T>& params, Var<T> x, const ForwardOptions& opts = {});

/// Critic feature stack [x_masked, block 1, ..., block L]. Only the first
/// max_layer + 1 entries are computed when max_layer >= 0.
template <typename T>
std::vector<Var<T>> critic_features(NetParams<T>& params, Var<T> x_masked,
                                    const ForwardOptions& opts = {}, int max_layer = -1);

}  // namespace segan
