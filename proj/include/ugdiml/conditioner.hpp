#pragma once

// Conditional control: image encoder -> feature pyramid (strides 4..32) ->
// FPN fusion into a stride-4 guidance map. CIML runs the same module on both
// images, so it owns no parameters beyond the IML path.

#include <torch/torch.h>

#include <memory>
#include <optional>
#include <vector>

#include "ugdiml/types.hpp"

namespace ugdiml {

/// Four feature maps at strides {4, 8, 16, 32}, finest first.
using FeaturePyramid = std::vector<torch::Tensor>;

class PyramidEncoder : public torch::nn::Module {
 public:
  virtual FeaturePyramid forward(const torch::Tensor& images) = 0;
  virtual std::vector<int64_t> widths() const = 0;
};

/// Small convolutional stage stack used at desk scale.
class ConvEncoder : public PyramidEncoder {
 public:
  explicit ConvEncoder(const std::vector<int64_t>& widths);
  FeaturePyramid forward(const torch::Tensor& images) override;
  std::vector<int64_t> widths() const override { return widths_; }

 private:
  std::vector<int64_t> widths_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};

/// Hierarchical shifted-window transformer (Swin-style).
class SwinEncoder : public PyramidEncoder {
 public:
  SwinEncoder(int64_t base_width, const std::vector<int64_t>& depths,
              const std::vector<int64_t>& heads, int64_t window_size);
  FeaturePyramid forward(const torch::Tensor& images) override;
  std::vector<int64_t> widths() const override { return widths_; }

 private:
  std::vector<int64_t> widths_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::nn::LayerNorm embed_norm_{nullptr};
  std::vector<torch::nn::ModuleList> stages_;
  torch::nn::ModuleList merges_{nullptr};
  std::vector<torch::nn::LayerNorm> out_norms_;
};

/// Top-down lateral fusion of a pyramid into one stride-4 map of `channels`.
class FpnImpl : public torch::nn::Module {
 public:
  FpnImpl(const std::vector<int64_t>& in_widths, int64_t channels);
  torch::Tensor forward(const FeaturePyramid& pyramid);
  int64_t channels() const { return channels_; }

 private:
  int64_t channels_;
  std::vector<torch::nn::Conv2d> laterals_;
  torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(Fpn);

/// Guidance for one batch: c^Forg always, c^Org only in CIML mode.
struct GuidanceConditions {
  torch::Tensor forged;
  std::optional<torch::Tensor> original;

  TaskMode mode() const {
    return original.has_value() ? TaskMode::CIML : TaskMode::IML;
  }
};

class ConditionerImpl : public torch::nn::Module {
 public:
  explicit ConditionerImpl(const ModelConfig& config);

  /// Throws ShapeError unless images are [B, 3, H, W] with H, W multiples of 32.
  FeaturePyramid encode_image(const torch::Tensor& images);
  torch::Tensor fpn_fuse(const FeaturePyramid& pyramid);
  torch::Tensor forward(const torch::Tensor& images);

  /// IML takes the forged image only; CIML requires the original as well.
  /// Throws ModeError when the inputs disagree with `mode`.
  GuidanceConditions build_condition(
      TaskMode mode, const torch::Tensor& forged,
      const std::optional<torch::Tensor>& original);

  PyramidEncoder& encoder() { return *encoder_; }

 private:
  std::shared_ptr<PyramidEncoder> encoder_;
  Fpn fpn_{nullptr};
};
TORCH_MODULE(Conditioner);

}  // namespace ugdiml
