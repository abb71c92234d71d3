#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "ugdiml/conditioner.hpp"
#include "ugdiml/denoiser.hpp"
#include "ugdiml/mask_codec.hpp"
#include "ugdiml/types.hpp"

namespace ugdiml {

/// The complete network: conditioner (encoder + FPN), class-embedding table
/// and denoiser. The task mode is a forward-time argument only, so the
/// parameter set is the same for IML and CIML.
class UgdImlModelImpl : public torch::nn::Module {
 public:
  UgdImlModelImpl(ModelConfig config, int diffusion_steps);

  const ModelConfig& config() const { return config_; }
  int diffusion_steps() const { return denoiser->diffusion_steps(); }

  GuidanceConditions condition(TaskMode mode, const torch::Tensor& forged,
                               const std::optional<torch::Tensor>& original);

  /// [B, H, W] 0/1 masks -> normalized embeddings at latent resolution.
  MaskEmbedding embed(const torch::Tensor& masks) const;

  /// Soft re-embedding of decoder output for the next sampling step.
  MaskEmbedding reembed(const MaskLogits& logits) const;

  MaskLogits denoise(const torch::Tensor& noisy,
                     const GuidanceConditions& conditions,
                     const torch::Tensor& timesteps);

  /// Sorted "name" list of every trainable parameter.
  std::vector<std::string> parameter_names() const;
  int64_t parameter_count() const;

  Conditioner conditioner{nullptr};
  EmbeddingTable class_embed{nullptr};
  Denoiser denoiser{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(UgdImlModel);

}  // namespace ugdiml
