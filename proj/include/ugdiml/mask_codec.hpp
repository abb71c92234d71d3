#pragma once

// Bridge between discrete masks and the continuous diffusion space.
//
// Masks are class-embedded with a learnable two-row table, normalized into
// [-1, 1] and laid out as [B, D, h, w] at latent resolution (input / stride).
// Decoder outputs are [B, 2, h, w] class scores; they are decoded back into
// full-resolution binary masks, or softly re-embedded for the next DDIM step.

#include <torch/torch.h>

#include <cstdint>

namespace ugdiml {

/// How table rows are rescaled into [-1, 1].
enum class EmbedNorm {
  PerChannel,  ///< each embedding channel mapped from its own [min, max]
  Global,      ///< one [min, max] over the whole table
};

/// H x W grid of labels: 0 = authentic, 1 = manipulated. Stored as uint8.
class BinaryMask {
 public:
  /// Throws ShapeError unless `grid` is a non-empty 2-D tensor holding only 0/1.
  explicit BinaryMask(torch::Tensor grid);

  static BinaryMask zeros(int64_t height, int64_t width);

  int64_t height() const { return grid_.size(0); }
  int64_t width() const { return grid_.size(1); }
  const torch::Tensor& grid() const noexcept { return grid_; }
  int64_t positives() const;

 private:
  torch::Tensor grid_;
};

/// One learnable row per class (row 0 authentic, row 1 manipulated).
class EmbeddingTableImpl : public torch::nn::Module {
 public:
  explicit EmbeddingTableImpl(int64_t dim);

  int64_t dim() const { return weight.size(1); }

  torch::Tensor weight;
};
TORCH_MODULE(EmbeddingTable);

/// Normalized table rows plus the affine scale that produced them.
struct NormalizedRows {
  torch::Tensor rows;  ///< [2, D] in [-1, 1]
  torch::Tensor low;   ///< per-channel ([D]) or scalar minimum before rescale
  torch::Tensor high;
};

NormalizedRows normalize_rows(const torch::Tensor& rows, EmbedNorm norm);

struct MaskEmbedding {
  torch::Tensor values;  ///< [B, D, h, w]
  torch::Tensor low;     ///< normalization metadata, see NormalizedRows
  torch::Tensor high;
  int64_t stride = 1;
};

struct MaskLogits {
  torch::Tensor values;  ///< [B, 2, h, w]
};

/// Majority-vote downsampling of [B, H, W] 0/1 masks by `stride` (ties -> 1).
torch::Tensor downsample_majority(const torch::Tensor& masks, int64_t stride);

/// Class-embeds a batch of [B, H, W] 0/1 masks. Differentiable w.r.t. `rows`.
MaskEmbedding embed_masks(const torch::Tensor& masks, const torch::Tensor& rows,
                          int64_t stride, EmbedNorm norm = EmbedNorm::PerChannel);

MaskEmbedding embed_mask(const BinaryMask& mask, const torch::Tensor& rows,
                         int64_t stride, EmbedNorm norm = EmbedNorm::PerChannel);

/// Softmax over classes, then bilinear upsampling of P(manipulated) to
/// [B, height, width].
torch::Tensor manipulation_probability(const MaskLogits& logits, int64_t height,
                                       int64_t width);

/// Batched decoding: [B, height, width] uint8 with 1 where P >= threshold.
torch::Tensor logits_to_masks(const MaskLogits& logits, double threshold,
                              int64_t height, int64_t width);

/// Single-image decoding; `logits` must have batch size 1.
BinaryMask logits_to_mask(const MaskLogits& logits, double threshold,
                          int64_t height, int64_t width);

/// Probability-weighted average of the normalized rows, per latent cell.
MaskEmbedding logits_to_embedding(const MaskLogits& logits,
                                  const torch::Tensor& rows,
                                  EmbedNorm norm = EmbedNorm::PerChannel);

/// Label of the nearest normalized row for each latent cell: [B, h, w] uint8.
torch::Tensor nearest_row_labels(const MaskEmbedding& embedding,
                                 const torch::Tensor& rows,
                                 EmbedNorm norm = EmbedNorm::PerChannel);

}  // namespace ugdiml
