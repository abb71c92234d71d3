#include "ugdiml/mask_codec.hpp"

#include <string>

#include "ugdiml/errors.hpp"

namespace F = torch::nn::functional;

namespace ugdiml {

BinaryMask::BinaryMask(torch::Tensor grid) : grid_(std::move(grid)) {
  if (grid_.dim() != 2 || grid_.numel() == 0) {
    throw ShapeError("binary mask must be a non-empty 2-D grid");
  }
  grid_ = grid_.to(torch::kUInt8).contiguous();
  if (grid_.gt(1).any().item<bool>()) {
    throw ShapeError("binary mask values must be 0 or 1");
  }
}

BinaryMask BinaryMask::zeros(int64_t height, int64_t width) {
  return BinaryMask(torch::zeros({height, width}, torch::kUInt8));
}

int64_t BinaryMask::positives() const {
  return grid_.sum().item<int64_t>();
}

EmbeddingTableImpl::EmbeddingTableImpl(int64_t dim) {
  if (dim < 1) {
    throw RangeError("embedding dimension must be positive");
  }
  weight = register_parameter("weight", torch::randn({2, dim}));
}

NormalizedRows normalize_rows(const torch::Tensor& rows, EmbedNorm norm) {
  if (rows.dim() != 2 || rows.size(0) != 2) {
    throw ShapeError("embedding table must have exactly two rows");
  }
  torch::Tensor low;
  torch::Tensor high;
  if (norm == EmbedNorm::PerChannel) {
    low = std::get<0>(rows.min(0));
    high = std::get<0>(rows.max(0));
  } else {
    low = rows.min();
    high = rows.max();
  }
  auto range = high - low;
  auto live = range > 0;
  auto safe = torch::where(live, range, torch::ones_like(range));
  auto scaled = 2.0 * (rows - low) / safe - 1.0;
  // A channel whose two rows coincide carries no class information.
  auto out = torch::where(live, scaled, torch::zeros_like(scaled));
  return {out, low.detach(), high.detach()};
}

torch::Tensor downsample_majority(const torch::Tensor& masks, int64_t stride) {
  if (masks.dim() != 3) {
    throw ShapeError("expected [B, H, W] masks");
  }
  if (stride < 1 || masks.size(1) % stride != 0 || masks.size(2) % stride != 0) {
    throw ShapeError("mask size " + std::to_string(masks.size(1)) + "x" +
                     std::to_string(masks.size(2)) +
                     " not divisible by latent stride " + std::to_string(stride));
  }
  auto m = masks.to(torch::kFloat32).unsqueeze(1);
  if (stride == 1) return m.squeeze(1);
  auto frac = F::avg_pool2d(m, F::AvgPool2dFuncOptions(stride).stride(stride));
  return frac.ge(0.5).to(torch::kFloat32).squeeze(1);
}

MaskEmbedding embed_masks(const torch::Tensor& masks, const torch::Tensor& rows,
                          int64_t stride, EmbedNorm norm) {
  auto labels = downsample_majority(masks, stride);  // [B, h, w]
  auto normed = normalize_rows(rows, norm);
  auto e0 = normed.rows[0].view({1, -1, 1, 1});
  auto e1 = normed.rows[1].view({1, -1, 1, 1});
  auto lab = labels.unsqueeze(1).to(rows.dtype());
  auto values = e0 + lab * (e1 - e0);
  return {values, normed.low, normed.high, stride};
}

MaskEmbedding embed_mask(const BinaryMask& mask, const torch::Tensor& rows,
                         int64_t stride, EmbedNorm norm) {
  return embed_masks(mask.grid().unsqueeze(0), rows, stride, norm);
}

namespace {

void check_logits(const MaskLogits& logits) {
  if (logits.values.dim() != 4 || logits.values.size(1) != 2) {
    throw ShapeError("mask logits must be [B, 2, h, w]");
  }
}

}  // namespace

torch::Tensor manipulation_probability(const MaskLogits& logits, int64_t height,
                                       int64_t width) {
  check_logits(logits);
  auto prob = torch::softmax(logits.values, 1).narrow(1, 1, 1);
  if (prob.size(2) != height || prob.size(3) != width) {
    prob = F::interpolate(prob, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
  }
  return prob.squeeze(1);
}

torch::Tensor logits_to_masks(const MaskLogits& logits, double threshold,
                              int64_t height, int64_t width) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw RangeError("threshold must lie in (0, 1)");
  }
  return manipulation_probability(logits, height, width)
      .ge(threshold)
      .to(torch::kUInt8);
}

BinaryMask logits_to_mask(const MaskLogits& logits, double threshold,
                          int64_t height, int64_t width) {
  check_logits(logits);
  if (logits.values.size(0) != 1) {
    throw ShapeError("logits_to_mask expects a single image");
  }
  return BinaryMask(logits_to_masks(logits, threshold, height, width)[0]);
}

MaskEmbedding logits_to_embedding(const MaskLogits& logits,
                                  const torch::Tensor& rows, EmbedNorm norm) {
  check_logits(logits);
  auto normed = normalize_rows(rows, norm);
  auto prob = torch::softmax(logits.values, 1);  // [B, 2, h, w]
  auto e0 = normed.rows[0].view({1, -1, 1, 1});
  auto e1 = normed.rows[1].view({1, -1, 1, 1});
  auto values = prob.narrow(1, 0, 1) * e0 + prob.narrow(1, 1, 1) * e1;
  return {values, normed.low, normed.high, 0};
}

torch::Tensor nearest_row_labels(const MaskEmbedding& embedding,
                                 const torch::Tensor& rows, EmbedNorm norm) {
  auto normed = normalize_rows(rows, norm);
  auto e0 = normed.rows[0].view({1, -1, 1, 1});
  auto e1 = normed.rows[1].view({1, -1, 1, 1});
  auto d0 = (embedding.values - e0).pow(2).sum(1);
  auto d1 = (embedding.values - e1).pow(2).sum(1);
  return d1.lt(d0).to(torch::kUInt8);
}

}  // namespace ugdiml
