#include "ugdiml/conditioner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ugdiml/errors.hpp"
#include "ugdiml/nn_util.hpp"

namespace F = torch::nn::functional;

namespace ugdiml {

namespace {

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t ch)
      : norm1_(register_module("norm1", group_norm(ch))),
        conv1_(register_module("conv1", conv3x3(ch, ch))),
        norm2_(register_module("norm2", group_norm(ch))),
        conv2_(register_module("conv2", conv3x3(ch, ch))) {}

  torch::Tensor forward(torch::Tensor x) {
    auto h = conv1_(F::silu(norm1_(x)));
    h = conv2_(F::silu(norm2_(h)));
    return x + h;
  }

 private:
  torch::nn::GroupNorm norm1_;
  torch::nn::Conv2d conv1_;
  torch::nn::GroupNorm norm2_;
  torch::nn::Conv2d conv2_;
};
TORCH_MODULE(ResBlock);

torch::nn::Sequential down_stage(int64_t in, int64_t out) {
  return torch::nn::Sequential(conv3x3(in, out, 2), group_norm(out),
                               torch::nn::SiLU(), ResBlock(out));
}

// Multi-head self-attention inside square windows with a learned relative
// position bias. The bias table is sized for `window` and indexed for any
// smaller effective window, which happens on low-resolution stages.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window)
      : heads_(heads), window_(window) {
    qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    proj_ = register_module("proj", torch::nn::Linear(dim, dim));
    const int64_t span = 2 * window - 1;
    bias_table_ = register_parameter(
        "relative_position_bias", torch::randn({span * span, heads}) * 0.02);
  }

  // x: [num_windows * B, n, C]; mask: [num_windows, n, n] or undefined.
  torch::Tensor forward(const torch::Tensor& x, int64_t win,
                        const torch::Tensor& mask) {
    const int64_t bw = x.size(0);
    const int64_t n = x.size(1);
    const int64_t c = x.size(2);
    const int64_t hd = c / heads_;
    auto qkv = qkv_(x).reshape({bw, n, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
    auto q = qkv[0] * (1.0 / std::sqrt(static_cast<double>(hd)));
    auto attn = torch::matmul(q, qkv[1].transpose(-2, -1));  // [bw, h, n, n]
    attn = attn + relative_bias(win).unsqueeze(0);
    if (mask.defined()) {
      const int64_t nw = mask.size(0);
      attn = attn.view({bw / nw, nw, heads_, n, n}) +
             mask.unsqueeze(1).unsqueeze(0);
      attn = attn.view({bw, heads_, n, n});
    }
    attn = torch::softmax(attn, -1);
    auto out = torch::matmul(attn, qkv[2]).transpose(1, 2).reshape({bw, n, c});
    return proj_(out);
  }

 private:
  torch::Tensor relative_bias(int64_t win) {
    auto ar = torch::arange(win, torch::kLong);
    auto grid = torch::meshgrid({ar, ar}, "ij");
    auto ys = grid[0].flatten();
    auto xs = grid[1].flatten();
    auto dy = ys.unsqueeze(1) - ys.unsqueeze(0) + (window_ - 1);
    auto dx = xs.unsqueeze(1) - xs.unsqueeze(0) + (window_ - 1);
    auto idx = (dy * (2 * window_ - 1) + dx).flatten();
    const int64_t n = win * win;
    return bias_table_.index_select(0, idx).view({n, n, heads_}).permute({2, 0, 1});
  }

  int64_t heads_;
  int64_t window_;
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
  torch::Tensor bias_table_;
};
TORCH_MODULE(WindowAttention);

torch::Tensor partition_windows(const torch::Tensor& x, int64_t win) {
  const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  return x.view({b, h / win, win, w / win, win, c})
      .permute({0, 1, 3, 2, 4, 5})
      .reshape({-1, win * win, c});
}

torch::Tensor merge_windows(const torch::Tensor& windows, int64_t win,
                            int64_t b, int64_t h, int64_t w) {
  const auto c = windows.size(2);
  return windows.view({b, h / win, w / win, win, win, c})
      .permute({0, 1, 3, 2, 4, 5})
      .reshape({b, h, w, c});
}

torch::Tensor shifted_window_mask(int64_t h, int64_t w, int64_t win,
                                  int64_t shift) {
  auto regions = torch::zeros({1, h, w, 1});
  const std::array<std::pair<int64_t, int64_t>, 3> hs{
      {{0, h - win}, {h - win, h - shift}, {h - shift, h}}};
  const std::array<std::pair<int64_t, int64_t>, 3> ws{
      {{0, w - win}, {w - win, w - shift}, {w - shift, w}}};
  double id = 0;
  for (auto [h0, h1] : hs) {
    for (auto [w0, w1] : ws) {
      regions.slice(1, h0, h1).slice(2, w0, w1).fill_(id);
      id += 1;
    }
  }
  auto m = partition_windows(regions, win).squeeze(-1);  // [nW, n]
  auto diff = m.unsqueeze(1) - m.unsqueeze(2);
  return torch::where(diff != 0, torch::full_like(diff, -100.0),
                      torch::zeros_like(diff));
}

class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(int64_t dim, int64_t heads, int64_t window, bool shifted)
      : window_(window), shifted_(shifted) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn_ = register_module("attn", WindowAttention(dim, heads, window));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    mlp_ = register_module(
        "mlp", torch::nn::Sequential(torch::nn::Linear(dim, 4 * dim),
                                     torch::nn::GELU(),
                                     torch::nn::Linear(4 * dim, dim)));
  }

  // x: [B, H, W, C]
  torch::Tensor forward(const torch::Tensor& x) {
    const auto b = x.size(0), h = x.size(1), w = x.size(2);
    const int64_t win = std::min({window_, h, w});
    const int64_t shift = (shifted_ && std::min(h, w) > window_) ? win / 2 : 0;
    const int64_t hp = (h + win - 1) / win * win;
    const int64_t wp = (w + win - 1) / win * win;

    auto y = norm1_(x);
    if (hp != h || wp != w) {
      y = F::pad(y, F::PadFuncOptions({0, 0, 0, wp - w, 0, hp - h}));
    }
    torch::Tensor mask;
    if (shift > 0) {
      y = torch::roll(y, {-shift, -shift}, {1, 2});
      mask = shifted_window_mask(hp, wp, win, shift);
    }
    auto windows = attn_(partition_windows(y, win), win, mask);
    y = merge_windows(windows, win, b, hp, wp);
    if (shift > 0) {
      y = torch::roll(y, {shift, shift}, {1, 2});
    }
    y = y.slice(1, 0, h).slice(2, 0, w);
    auto out = x + y;
    return out + mlp_->forward(norm2_(out));
  }

 private:
  int64_t window_;
  bool shifted_;
  torch::nn::LayerNorm norm1_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(SwinBlock);

class PatchMergingImpl : public torch::nn::Module {
 public:
  explicit PatchMergingImpl(int64_t dim) {
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
    reduce_ = register_module(
        "reduction",
        torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
  }

  torch::Tensor forward(torch::Tensor x) {
    const auto h = x.size(1), w = x.size(2);
    if (h % 2 != 0 || w % 2 != 0) {
      x = F::pad(x, F::PadFuncOptions({0, 0, 0, w % 2, 0, h % 2}));
    }
    using torch::indexing::Slice;
    auto x0 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
    auto x1 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
    auto x2 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
    auto x3 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
    return reduce_(norm_(torch::cat({x0, x1, x2, x3}, -1)));
  }

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduce_{nullptr};
};
TORCH_MODULE(PatchMerging);

}  // namespace

ConvEncoder::ConvEncoder(const std::vector<int64_t>& widths) : widths_(widths) {
  if (widths_.size() != 4) {
    throw ConfigError("model.encoder_widths: needs 4 entries");
  }
  const int64_t half = std::max<int64_t>(widths_[0] / 2, 1);
  stem_ = register_module(
      "stem", torch::nn::Sequential(conv3x3(3, half, 2), group_norm(half),
                                    torch::nn::SiLU(),
                                    conv3x3(half, widths_[0], 2),
                                    group_norm(widths_[0]), torch::nn::SiLU(),
                                    ResBlock(widths_[0])));
  for (std::size_t i = 1; i < widths_.size(); ++i) {
    stages_.push_back(register_module("stage" + std::to_string(i),
                                      down_stage(widths_[i - 1], widths_[i])));
  }
}

FeaturePyramid ConvEncoder::forward(const torch::Tensor& images) {
  FeaturePyramid out;
  auto x = stem_->forward(images);
  out.push_back(x);
  for (auto& stage : stages_) {
    x = stage->forward(x);
    out.push_back(x);
  }
  return out;
}

SwinEncoder::SwinEncoder(int64_t base_width, const std::vector<int64_t>& depths,
                         const std::vector<int64_t>& heads, int64_t window_size) {
  if (depths.size() != 4 || heads.size() != 4) {
    throw ConfigError("model.encoder_depths/encoder_heads: need 4 entries");
  }
  patch_embed_ = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, base_width, 4).stride(4)));
  embed_norm_ = register_module(
      "embed_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({base_width})));
  merges_ = register_module("merges", torch::nn::ModuleList());
  int64_t dim = base_width;
  for (std::size_t s = 0; s < 4; ++s) {
    widths_.push_back(dim);
    torch::nn::ModuleList blocks;
    for (int64_t d = 0; d < depths[s]; ++d) {
      blocks->push_back(SwinBlock(dim, heads[s], window_size, d % 2 == 1));
    }
    stages_.push_back(register_module("stage" + std::to_string(s), blocks));
    out_norms_.push_back(register_module(
        "norm" + std::to_string(s),
        torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}))));
    if (s < 3) {
      merges_->push_back(PatchMerging(dim));
      dim *= 2;
    }
  }
}

FeaturePyramid SwinEncoder::forward(const torch::Tensor& images) {
  auto x = patch_embed_(images).permute({0, 2, 3, 1});  // [B, H, W, C]
  x = embed_norm_(x);
  FeaturePyramid out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const auto& block : *stages_[s]) {
      x = block->as<SwinBlockImpl>()->forward(x);
    }
    out.push_back(out_norms_[s](x).permute({0, 3, 1, 2}).contiguous());
    if (s + 1 < stages_.size()) {
      x = merges_[s]->as<PatchMergingImpl>()->forward(x);
    }
  }
  return out;
}

FpnImpl::FpnImpl(const std::vector<int64_t>& in_widths, int64_t channels)
    : channels_(channels) {
  for (std::size_t i = 0; i < in_widths.size(); ++i) {
    laterals_.push_back(register_module(
        "lateral" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_widths[i], channels, 1))));
  }
  // Replicate padding keeps a constant input constant at the borders.
  output_ = register_module(
      "output", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3)
                                      .padding(1)
                                      .padding_mode(torch::kReplicate)));
}

torch::Tensor FpnImpl::forward(const FeaturePyramid& pyramid) {
  if (pyramid.size() != laterals_.size()) {
    throw ShapeError("FPN expects " + std::to_string(laterals_.size()) +
                     " pyramid levels, got " + std::to_string(pyramid.size()));
  }
  auto top = laterals_.back()(pyramid.back());
  for (int i = static_cast<int>(pyramid.size()) - 2; i >= 0; --i) {
    const auto& level = pyramid[static_cast<std::size_t>(i)];
    auto up = F::interpolate(
        top, F::InterpolateFuncOptions()
                 .size(std::vector<int64_t>{level.size(2), level.size(3)})
                 .mode(torch::kNearest));
    top = laterals_[static_cast<std::size_t>(i)](level) + up;
  }
  return output_(top);
}

ConditionerImpl::ConditionerImpl(const ModelConfig& config) {
  if (config.profile == SizeProfile::Tiny) {
    encoder_ = register_module(
        "encoder", std::make_shared<ConvEncoder>(config.encoder_widths));
  } else {
    encoder_ = register_module(
        "encoder", std::make_shared<SwinEncoder>(
                       config.encoder_widths[0], config.encoder_depths,
                       config.encoder_heads, config.window_size));
  }
  fpn_ = register_module("fpn", Fpn(encoder_->widths(), config.fpn_channels));
}

FeaturePyramid ConditionerImpl::encode_image(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("expected [B, 3, H, W] images");
  }
  if (images.size(2) < 32 || images.size(2) % 32 != 0 || images.size(3) < 32 ||
      images.size(3) % 32 != 0) {
    throw ShapeError("image size " + std::to_string(images.size(2)) + "x" +
                     std::to_string(images.size(3)) +
                     " is not a positive multiple of 32");
  }
  return encoder_->forward(images);
}

torch::Tensor ConditionerImpl::fpn_fuse(const FeaturePyramid& pyramid) {
  return fpn_->forward(pyramid);
}

torch::Tensor ConditionerImpl::forward(const torch::Tensor& images) {
  return fpn_fuse(encode_image(images));
}

GuidanceConditions ConditionerImpl::build_condition(
    TaskMode mode, const torch::Tensor& forged,
    const std::optional<torch::Tensor>& original) {
  if (mode == TaskMode::IML && original.has_value()) {
    throw ModeError("IML takes a forged image only; an original was supplied");
  }
  if (mode == TaskMode::CIML && !original.has_value()) {
    throw ModeError("CIML requires the original image");
  }
  GuidanceConditions out;
  out.forged = forward(forged);
  if (original) {
    if (!original->sizes().equals(forged.sizes())) {
      throw ShapeError("forged and original images differ in shape");
    }
    out.original = forward(*original);
  }
  return out;
}

}  // namespace ugdiml
