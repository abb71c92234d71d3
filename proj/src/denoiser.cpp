#include "ugdiml/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ugdiml/errors.hpp"
#include "ugdiml/nn_util.hpp"

namespace F = torch::nn::functional;

namespace ugdiml {

torch::Tensor timestep_encoding(const torch::Tensor& timesteps, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kFloat64) *
                          (-std::log(10000.0) / static_cast<double>(half)));
  auto args = timesteps.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1).to(torch::kFloat32);
}

FusionImpl::FusionImpl(int64_t embed_dim, int64_t condition_channels,
                       int64_t out_channels)
    : out_channels_(out_channels) {
  conv_ = register_module("conv",
                          conv3x3(embed_dim + condition_channels, out_channels));
  norm_ = register_module("norm", group_norm(out_channels));
}

torch::Tensor FusionImpl::forward(const torch::Tensor& noisy,
                                  const torch::Tensor& condition) {
  return F::silu(norm_(conv_(torch::cat({noisy, condition}, 1))));
}

namespace {

// Decoder layers operate on tokens [B, N, C] laid out row-major over an
// h x w grid, with timestep-driven scale/shift ahead of each sub-block.
class DecoderLayer : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& tokens,
                                const torch::Tensor& time, int64_t h,
                                int64_t w) = 0;
};

class ModulatedLayer : public DecoderLayer {
 protected:
  ModulatedLayer(int64_t width, int64_t time_hidden) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(
        torch::nn::LayerNormOptions({width}).elementwise_affine(false)));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(
        torch::nn::LayerNormOptions({width}).elementwise_affine(false)));
    modulation_ = register_module("modulation",
                                  torch::nn::Linear(time_hidden, 4 * width));
    ffn_ = register_module(
        "ffn", torch::nn::Sequential(torch::nn::Linear(width, 2 * width),
                                     torch::nn::SiLU(),
                                     torch::nn::Linear(2 * width, width)));
  }

  virtual torch::Tensor attend(const torch::Tensor& tokens, int64_t h,
                               int64_t w) = 0;

 public:
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& time,
                        int64_t h, int64_t w) override {
    auto mod = modulation_(F::silu(time)).unsqueeze(1).chunk(4, -1);
    auto x = tokens;
    x = x + attend(norm1_(x) * (1 + mod[0]) + mod[1], h, w);
    x = x + ffn_->forward(norm2_(x) * (1 + mod[2]) + mod[3]);
    return x;
  }

 private:
  torch::nn::LayerNorm norm1_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Linear modulation_{nullptr};
  torch::nn::Sequential ffn_{nullptr};
};

// Global self-attention over all latent cells with a depthwise-conv
// positional term.
class GlobalAttentionLayer : public ModulatedLayer {
 public:
  GlobalAttentionLayer(int64_t width, int64_t heads, int64_t time_hidden)
      : ModulatedLayer(width, time_hidden) {
    position_ = register_module(
        "position", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3)
                                          .padding(1)
                                          .groups(width)));
    attention_ = register_module(
        "attention", torch::nn::MultiheadAttention(
                         torch::nn::MultiheadAttentionOptions(width, heads)));
  }

 protected:
  torch::Tensor attend(const torch::Tensor& tokens, int64_t h,
                       int64_t w) override {
    const auto b = tokens.size(0), c = tokens.size(2);
    auto grid = tokens.transpose(1, 2).reshape({b, c, h, w});
    auto x = tokens + position_(grid).flatten(2).transpose(1, 2);
    auto seq = x.transpose(0, 1);  // [N, B, C]
    auto out = std::get<0>(attention_->forward(seq, seq, seq, torch::Tensor(), /*need_weights=*/false));
    return out.transpose(0, 1);
  }

 private:
  torch::nn::Conv2d position_{nullptr};
  torch::nn::MultiheadAttention attention_{nullptr};
};

// Single-scale deformable attention: every cell is a query with its own
// centre as the reference point, attending to a few learned offsets per head.
class DeformableAttentionLayer : public ModulatedLayer {
 public:
  DeformableAttentionLayer(int64_t width, int64_t heads, int64_t points,
                           int64_t time_hidden)
      : ModulatedLayer(width, time_hidden), heads_(heads), points_(points) {
    value_ = register_module("value", torch::nn::Linear(width, width));
    offsets_ = register_module("offsets",
                               torch::nn::Linear(width, heads * points * 2));
    weights_ = register_module("weights", torch::nn::Linear(width, heads * points));
    output_ = register_module("output", torch::nn::Linear(width, width));

    torch::NoGradGuard no_grad;
    offsets_->weight.zero_();
    weights_->weight.zero_();
    weights_->bias.zero_();
    auto bias = torch::zeros({heads, points, 2});
    for (int64_t hd = 0; hd < heads; ++hd) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(hd) /
                           static_cast<double>(heads);
      const double cx = std::cos(theta), sy = std::sin(theta);
      const double norm = std::max(std::abs(cx), std::abs(sy));
      for (int64_t p = 0; p < points; ++p) {
        bias[hd][p][0] = cx / norm * static_cast<double>(p + 1);
        bias[hd][p][1] = sy / norm * static_cast<double>(p + 1);
      }
    }
    offsets_->bias.copy_(bias.flatten());
  }

 protected:
  torch::Tensor attend(const torch::Tensor& tokens, int64_t h,
                       int64_t w) override {
    const auto b = tokens.size(0), n = tokens.size(1), c = tokens.size(2);
    const auto hd = c / heads_;
    auto value = value_(tokens)
                     .view({b, h, w, heads_, hd})
                     .permute({0, 3, 4, 1, 2})
                     .reshape({b * heads_, hd, h, w});

    auto opts = tokens.options();
    auto ys = (torch::arange(h, opts) + 0.5) / static_cast<double>(h);
    auto xs = (torch::arange(w, opts) + 0.5) / static_cast<double>(w);
    auto mesh = torch::meshgrid({ys, xs}, "ij");
    auto ref = torch::stack({mesh[1].flatten(), mesh[0].flatten()}, -1);  // [N, 2] (x, y)
    auto scale = torch::tensor({static_cast<double>(w), static_cast<double>(h)}, opts);

    auto offsets = offsets_(tokens).view({b, n, heads_, points_, 2});
    auto loc = ref.view({1, n, 1, 1, 2}) + offsets / scale;
    auto grid = (2 * loc - 1).permute({0, 2, 1, 3, 4}).reshape({b * heads_, n, points_, 2});
    auto attn = torch::softmax(weights_(tokens).view({b, n, heads_, points_}), -1);

    auto sampled = F::grid_sample(value, grid,
                                  F::GridSampleFuncOptions()
                                      .mode(torch::kBilinear)
                                      .padding_mode(torch::kZeros)
                                      .align_corners(false));  // [B*H, hd, N, P]
    attn = attn.permute({0, 2, 1, 3}).reshape({b * heads_, 1, n, points_});
    auto out = (sampled * attn).sum(-1).view({b, heads_ * hd, n}).transpose(1, 2);
    return output_(out);
  }

 private:
  int64_t heads_;
  int64_t points_;
  torch::nn::Linear value_{nullptr};
  torch::nn::Linear offsets_{nullptr};
  torch::nn::Linear weights_{nullptr};
  torch::nn::Linear output_{nullptr};
};

}  // namespace

DenoiserImpl::DenoiserImpl(const ModelConfig& config, int diffusion_steps)
    : diffusion_steps_(diffusion_steps), time_dim_(config.time_dim) {
  const int64_t width = 2 * config.fusion_channels;
  const int64_t time_hidden = 2 * config.time_dim;
  fusion_ = register_module("fusion", Fusion(config.embed_dim, config.fpn_channels,
                                             config.fusion_channels));
  time_mlp_ = register_module(
      "time_mlp", torch::nn::Sequential(torch::nn::Linear(config.time_dim, time_hidden),
                                        torch::nn::SiLU(),
                                        torch::nn::Linear(time_hidden, time_hidden)));
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < config.decoder_layers; ++i) {
    if (config.decoder_attention == DecoderAttention::Global) {
      layers_->push_back(std::make_shared<GlobalAttentionLayer>(
          width, config.decoder_heads, time_hidden));
    } else {
      layers_->push_back(std::make_shared<DeformableAttentionLayer>(
          width, config.decoder_heads, config.deform_points, time_hidden));
    }
  }
  head_norm_ = register_module("head_norm",
                               torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  head_ = register_module("head", torch::nn::Linear(width, 2));
}

torch::Tensor DenoiserImpl::fuse_inputs(const DenoiserInput& input) {
  const auto& noisy = input.noisy;
  const auto& cond = input.conditions;
  if (noisy.dim() != 4 || cond.forged.dim() != 4 ||
      noisy.size(0) != cond.forged.size(0) ||
      noisy.size(2) != cond.forged.size(2) || noisy.size(3) != cond.forged.size(3)) {
    throw ShapeError("noisy embedding and guidance condition grids differ");
  }
  auto slot_a = fusion_(noisy, cond.forged);
  torch::Tensor slot_b;
  if (cond.original) {
    if (!cond.original->sizes().equals(cond.forged.sizes())) {
      throw ShapeError("forged and original guidance grids differ");
    }
    slot_b = fusion_(noisy, *cond.original);
  } else {
    slot_b = torch::zeros_like(slot_a);
  }
  return torch::cat({slot_a, slot_b}, 1);
}

MaskLogits DenoiserImpl::forward(const DenoiserInput& input) {
  const auto& t = input.timesteps;
  if (t.dim() != 1 || t.size(0) != input.noisy.size(0)) {
    throw ShapeError("one timestep per batch element required");
  }
  if (t.lt(1).any().item<bool>() || t.gt(diffusion_steps_).any().item<bool>()) {
    throw RangeError("denoiser timestep outside [1, " +
                     std::to_string(diffusion_steps_) + "]");
  }
  auto fused = fuse_inputs(input);
  const auto b = fused.size(0), h = fused.size(2), w = fused.size(3);
  auto time = time_mlp_->forward(timestep_encoding(t, time_dim_).to(fused.dtype()));
  auto tokens = fused.flatten(2).transpose(1, 2);  // [B, N, C]
  for (const auto& layer : *layers_) {
    tokens = layer->as<DecoderLayer>()->forward(tokens, time, h, w);
  }
  auto logits = head_(head_norm_(tokens));  // [B, N, 2]
  return {logits.transpose(1, 2).reshape({b, 2, h, w})};
}

}  // namespace ugdiml
