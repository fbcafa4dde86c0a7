#pragma once

#include <vector>

#include "segan/models.hpp"

namespace segan {

enum class LossVariant { multiscale, s0, s3, pixelwise_baseline };

/// Which critic layers enter the multi-scale L1 objective. Layer 0 is the
/// masked input itself, layer L the deepest critic block.
struct LossConfig {
  LossVariant variant = LossVariant::multiscale;
  std::vector<int> scales;

  /// multiscale -> {0..L} ({1..L} without the input scale), s0 -> {0}, s3 -> {L}.
  static LossConfig for_variant(LossVariant variant, int critic_depth,
                                bool include_input_scale = true);
  void validate(int critic_depth) const;
  int deepest() const;
};

/// Every channel of x times the single-channel label map.
template <typename T>
Var<T> mask_image(Var<T> x, Var<T> label);

/// Mean over the selected scales of mean_abs(f_i(masked_pred), f_i(masked_gt)).
template <typename T>
Var<T> multiscale_l1_masked(NetParams<T>& critic, Var<T> masked_pred, Var<T> masked_gt,
                            const LossConfig& cfg, const ForwardOptions& critic_opts = {});

/// Masks x by the predicted and the ground-truth single-class maps and compares
/// the critic features of the two masked images.
template <typename T>
Var<T> multiscale_l1(NetParams<T>& critic, Var<T> x, Var<T> pred, Var<T> gt,
                     const LossConfig& cfg, const ForwardOptions& critic_opts = {});

/// Arithmetic mean of per-critic losses.
template <typename T>
Var<T> average_multi_critic_loss(const std::vector<Var<T>>& losses);

/// Mean per-pixel, per-class binary cross-entropy with probabilities clamped
/// to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> pixelwise_baseline_loss(Var<T> pred, Var<T> gt);

}  // namespace segan
