#pragma once

// Denoising module: fuses the noisy mask embedding with the guidance maps and
// decodes per-cell class logits (the clean-mask estimate, not the noise).

#include <torch/torch.h>

#include "ugdiml/conditioner.hpp"
#include "ugdiml/mask_codec.hpp"
#include "ugdiml/types.hpp"

namespace ugdiml {

/// Sinusoidal encoding of timesteps: [B] -> [B, dim].
torch::Tensor timestep_encoding(const torch::Tensor& timesteps, int64_t dim);

struct DenoiserInput {
  torch::Tensor noisy;  ///< [B, D, h, w]
  GuidanceConditions conditions;
  torch::Tensor timesteps;  ///< [B] integers in [1, T]
};

/// concat(noisy, condition) -> conv -> F channels. One instance serves both
/// CIML branches.
class FusionImpl : public torch::nn::Module {
 public:
  FusionImpl(int64_t embed_dim, int64_t condition_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& noisy, const torch::Tensor& condition);
  int64_t out_channels() const { return out_channels_; }

 private:
  int64_t out_channels_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
};
TORCH_MODULE(Fusion);

class DenoiserImpl : public torch::nn::Module {
 public:
  DenoiserImpl(const ModelConfig& config, int diffusion_steps);

  /// [B, 2F, h, w]: slot A from the forged branch, slot B from the original
  /// branch in CIML or zeros in IML.
  torch::Tensor fuse_inputs(const DenoiserInput& input);

  MaskLogits forward(const DenoiserInput& input);

  int diffusion_steps() const { return diffusion_steps_; }

 private:
  int diffusion_steps_;
  int64_t time_dim_;
  Fusion fusion_{nullptr};
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::ModuleList layers_{nullptr};
  torch::nn::LayerNorm head_norm_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Denoiser);

}  // namespace ugdiml
