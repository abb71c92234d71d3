#include "ugdiml/model.hpp"

#include <algorithm>

namespace ugdiml {

UgdImlModelImpl::UgdImlModelImpl(ModelConfig config, int diffusion_steps)
    : config_(std::move(config)) {
  config_.validate();
  conditioner = register_module("conditioner", Conditioner(config_));
  class_embed = register_module("class_embed", EmbeddingTable(config_.embed_dim));
  denoiser = register_module("denoiser", Denoiser(config_, diffusion_steps));
}

GuidanceConditions UgdImlModelImpl::condition(
    TaskMode mode, const torch::Tensor& forged,
    const std::optional<torch::Tensor>& original) {
  return conditioner->build_condition(mode, forged, original);
}

MaskEmbedding UgdImlModelImpl::embed(const torch::Tensor& masks) const {
  return embed_masks(masks, class_embed->weight, config_.latent_stride,
                     config_.embed_norm);
}

MaskEmbedding UgdImlModelImpl::reembed(const MaskLogits& logits) const {
  auto e = logits_to_embedding(logits, class_embed->weight, config_.embed_norm);
  e.stride = config_.latent_stride;
  return e;
}

MaskLogits UgdImlModelImpl::denoise(const torch::Tensor& noisy,
                                    const GuidanceConditions& conditions,
                                    const torch::Tensor& timesteps) {
  return denoiser->forward(DenoiserInput{noisy, conditions, timesteps});
}

std::vector<std::string> UgdImlModelImpl::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& item : named_parameters(/*recurse=*/true)) {
    names.push_back(item.key());
  }
  std::sort(names.begin(), names.end());
  return names;
}

int64_t UgdImlModelImpl::parameter_count() const {
  int64_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

}  // namespace ugdiml
