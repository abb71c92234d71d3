#pragma once

// Task losses on per-pixel manipulation probabilities. Inputs are [H, W] or
// [B, H, W]; batched inputs are reduced per image and then averaged.

#include <torch/torch.h>

namespace ugdiml {

struct LossConfig {
  double mu = 0.5;      ///< positive-class weight
  double eta = 2.5;     ///< negative-class weight
  double lambda = 0.3;  ///< weight of the cross-entropy term
  double smooth = 1.0;  ///< dice smoothing
  double clip_eps = 1e-7;

  /// Throws ConfigError unless mu, eta > 0, lambda in [0, 1], smooth >= 0.
  void validate() const;
};

/// 1 - (2 sum(p g) + smooth) / (sum(p) + sum(g) + smooth).
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                        double smooth = 1.0);

/// mean(-[mu g log p + eta (1 - g) log(1 - p)]) with p clamped to
/// [clip_eps, 1 - clip_eps].
torch::Tensor weighted_ce(const torch::Tensor& pred, const torch::Tensor& gt,
                          double mu = 0.5, double eta = 2.5,
                          double clip_eps = 1e-7);

/// lambda * weighted_ce + (1 - lambda) * dice_loss.
torch::Tensor combined_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                            const LossConfig& config = {});

}  // namespace ugdiml
