#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "segan/graph.hpp"

namespace segan {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
struct ConvParams {
  Tensor<T> weights;  // [out, in, k, k]
  Tensor<T> bias;     // [out]
  int stride = 1;
  int padding = 1;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel() const { return weights.dim(2); }
};

enum class BnMode { train, eval };

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;         // [C]
  Tensor<T> beta;          // [C]
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  T eps = T(1e-5);
  T momentum = T(0.1);
  BnMode mode = BnMode::train;

  std::size_t channels() const { return gamma.numel(); }
};

/// Conv weights ~ Normal(0, 0.02) and zero bias; rng is advanced.
template <typename T>
ConvParams<T> make_conv(std::size_t in, std::size_t out, int kernel, int stride, int padding,
                        std::mt19937_64& rng);

/// gamma 1, beta 0, running mean 0, running var 1.
template <typename T>
BatchNormParams<T> make_batch_norm(std::size_t channels);

/// Cross-correlation with zero padding plus bias. Output spatial size is
/// floor((H + 2*pad - k) / stride) + 1.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weights, Var<T> bias, int stride, int padding);

/// Binds the parameters into x's graph; gradients flow into them when
/// trainable and they require grad.
template <typename T>
Var<T> conv2d(Var<T> x, ConvParams<T>& p, bool trainable = true);

/// Nearest-neighbour 2x upsampling of a 4-D tensor.
template <typename T>
Var<T> resize2x(Var<T> x);

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope = T(kLeakySlope));

template <typename T>
Var<T> sigmoid(Var<T> x);

/// Per-channel normalization over (N, H, W). Train mode uses batch statistics
/// and, if update_running_stats, folds them into the running estimates
/// (unbiased variance). Eval mode uses the running estimates only.
template <typename T>
Var<T> batch_norm(Var<T> x, BatchNormParams<T>& p, bool trainable = true,
                  bool update_running_stats = true);

/// Per-parameter squared-gradient accumulators for RMSProp.
template <typename T>
struct OptimState {
  T learning_rate = T(2e-5);
  T decay = T(0.9);
  T eps = T(1e-8);
  std::vector<std::vector<T>> accumulators;
};

/// Descend minimizes the loss, ascend maximizes it.
enum class Direction : int { descend = -1, ascend = 1 };

/// v <- decay*v + (1-decay)*g^2;  theta <- theta + dir * lr * g / (sqrt(v) + eps).
/// Accumulators are created on the first call and must keep matching shapes.
template <typename T>
void rmsprop_step(std::span<Tensor<T>* const> params, OptimState<T>& state, Direction dir);

/// Clamps every value of every tensor into [-c, c].
template <typename T>
void clip_weights(std::span<Tensor<T>* const> params, T c);

template <typename T>
T max_abs(std::span<Tensor<T>* const> params);

}  // namespace segan
