#include "segan/loss.hpp"

#include <algorithm>
#include <cmath>

namespace segan {

LossConfig LossConfig::for_variant(LossVariant variant, int critic_depth,
                                   bool include_input_scale) {
  LossConfig cfg;
  cfg.variant = variant;
  switch (variant) {
    case LossVariant::multiscale:
      for (int i = include_input_scale ? 0 : 1; i <= critic_depth; ++i) cfg.scales.push_back(i);
      break;
    case LossVariant::s0:
      cfg.scales = {0};
      break;
    case LossVariant::s3:
      cfg.scales = {critic_depth};
      break;
    case LossVariant::pixelwise_baseline:
      break;
  }
  cfg.validate(critic_depth);
  return cfg;
}

void LossConfig::validate(int critic_depth) const {
  if (variant == LossVariant::pixelwise_baseline) return;
  if (scales.empty()) throw ShapeError("loss config: scale set is empty");
  for (int s : scales) {
    if (s < 0 || s > critic_depth) {
      throw ShapeError("loss config: scale " + std::to_string(s) + " outside 0.." +
                       std::to_string(critic_depth));
    }
  }
  if (variant == LossVariant::s0 && scales != std::vector<int>{0}) {
    throw ShapeError("loss config: s0 uses exactly scale 0");
  }
  if (variant == LossVariant::s3 && scales != std::vector<int>{critic_depth}) {
    throw ShapeError("loss config: s3 uses exactly the deepest critic layer");
  }
}

int LossConfig::deepest() const {
  return scales.empty() ? 0 : *std::max_element(scales.begin(), scales.end());
}

template <typename T>
Var<T> mask_image(Var<T> x, Var<T> label) {
  const Shape& ls = label.shape();
  if (ls.size() != 4 || ls[1] != 1) {
    throw ShapeError("mask_image: label must be single-channel 4-D, got " + shape_string(ls));
  }
#ifndef NDEBUG
  for (T v : label.value().data()) {
    if (v < T{0} || v > T{1}) throw ShapeError("mask_image: label values must lie in [0, 1]");
  }
#endif
  return hadamard(x, label);
}

template <typename T>
Var<T> multiscale_l1_masked(NetParams<T>& critic, Var<T> masked_pred, Var<T> masked_gt,
                            const LossConfig& cfg, const ForwardOptions& critic_opts) {
  cfg.validate(critic.spec.down_blocks);
  if (cfg.variant == LossVariant::pixelwise_baseline) {
    throw ShapeError("multiscale_l1: the pixel-wise baseline has no critic loss");
  }
  const int deepest = cfg.deepest();
  std::vector<Var<T>> fp{masked_pred};
  std::vector<Var<T>> fg{masked_gt};
  if (deepest > 0) {
    fp = critic_features(critic, masked_pred, critic_opts, deepest);
    fg = critic_features(critic, masked_gt, critic_opts, deepest);
  }
  std::vector<Var<T>> terms;
  for (int s : cfg.scales) terms.push_back(mean_abs(fp[s], fg[s]));
  return terms.size() == 1 ? terms[0] : mean_of(terms);
}

template <typename T>
Var<T> multiscale_l1(NetParams<T>& critic, Var<T> x, Var<T> pred, Var<T> gt,
                     const LossConfig& cfg, const ForwardOptions& critic_opts) {
  if (pred.shape().size() != 4 || pred.shape()[1] != 1 || gt.shape().size() != 4 ||
      gt.shape()[1] != 1) {
    throw ShapeError("multiscale_l1: predicted and ground-truth maps must have one class");
  }
  return multiscale_l1_masked(critic, mask_image(x, pred), mask_image(x, gt), cfg, critic_opts);
}

template <typename T>
Var<T> average_multi_critic_loss(const std::vector<Var<T>>& losses) {
  if (losses.empty()) throw ShapeError("average_multi_critic_loss: no losses");
  return mean_of(losses);
}

template <typename T>
Var<T> pixelwise_baseline_loss(Var<T> pred, Var<T> gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("pixelwise_baseline_loss: shape mismatch " + shape_string(pred.shape()) +
                     " vs " + shape_string(gt.shape()));
  }
  static constexpr T lo = T(1e-7);
  static constexpr T hi = T(1) - T(1e-7);
  std::span<const T> p = pred.value().data();
  std::span<const T> y = gt.value().data();
  T total{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T q = std::clamp(p[i], lo, hi);
    total -= y[i] * std::log(q) + (T{1} - y[i]) * std::log(T{1} - q);
  }
  const T inv = T{1} / static_cast<T>(p.size());
  return pred.graph->record(
      Tensor<T>::scalar(total * inv), {pred, gt}, [pred, gt, inv](Graph<T>& g, std::span<const T> dy) {
        std::span<const T> p = pred.value().data();
        std::span<const T> y = gt.value().data();
        auto dp = g.grad_of(pred);
        auto dg = g.grad_of(gt);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const T q = std::clamp(p[i], lo, hi);
          if (!dp.empty() && p[i] == q) {
            dp[i] += dy[0] * inv * (-y[i] / q + (T{1} - y[i]) / (T{1} - q));
          }
          if (!dg.empty()) dg[i] += dy[0] * inv * (std::log(T{1} - q) - std::log(q));
        }
      });
}

#define SEGAN_INSTANTIATE(T)                                                                   \
  template Var<T> mask_image(Var<T>, Var<T>);                                                  \
  template Var<T> multiscale_l1_masked(NetParams<T>&, Var<T>, Var<T>, const LossConfig&,       \
                                       const ForwardOptions&);                                 \
  template Var<T> multiscale_l1(NetParams<T>&, Var<T>, Var<T>, Var<T>, const LossConfig&,      \
                                const ForwardOptions&);                                        \
  template Var<T> average_multi_critic_loss(const std::vector<Var<T>>&);                       \
  template Var<T> pixelwise_baseline_loss(Var<T>, Var<T>);

SEGAN_INSTANTIATE(float)
SEGAN_INSTANTIATE(double)

}  // namespace segan
