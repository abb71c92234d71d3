#pragma once

// Inference: DDIM sampling from Gaussian noise over a timestep subsequence,
// the zero-noise baseline, and uncertainty maps from the step trajectory.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "ugdiml/conditioner.hpp"
#include "ugdiml/diffusion.hpp"
#include "ugdiml/mask_codec.hpp"
#include "ugdiml/model.hpp"

namespace ugdiml {

struct TrajectoryStep {
  int timestep = 0;
  MaskLogits logits;          ///< [B, 2, h, w]
  torch::Tensor probability;  ///< [B, H, W] P(manipulated), full resolution
  torch::Tensor mask;         ///< [B, H, W] uint8
};

/// Ordered from the first (noisiest) to the last prediction.
struct SamplingTrajectory {
  std::vector<TrajectoryStep> steps;

  const torch::Tensor& final_mask() const { return steps.back().mask; }
  const torch::Tensor& final_probability() const { return steps.back().probability; }
};

struct SamplerOptions {
  int steps = 1;
  uint64_t seed = 0;
  double threshold = 0.5;
  int64_t height = 0;  ///< output resolution; 0 = latent * stride
  int64_t width = 0;
};

/// Runs `options.steps` denoiser calls from x_T ~ N(0, I) (seeded), feeding
/// each clean estimate back through the DDIM update; the last update lands
/// on timestep 0. Throws CheckpointError when the model was built for a
/// different number of diffusion steps than `schedule`.
SamplingTrajectory sample(UgdImlModel& model, const GuidanceConditions& conditions,
                          const NoiseSchedule& schedule,
                          const SamplerOptions& options);

struct ZeroNoiseResult {
  torch::Tensor probability;  ///< [B, H, W]
  torch::Tensor mask;         ///< [B, H, W] uint8
};

/// One denoiser call on an all-zero state at timestep T.
ZeroNoiseResult sample_zero_noise(UgdImlModel& model,
                                  const GuidanceConditions& conditions,
                                  const SamplerOptions& options);

/// Per-pixel count of label flips between consecutive step masks divided by
/// (S - 1); all zeros when S = 1. Returns [B, H, W] float32 in [0, 1].
torch::Tensor uncertainty_map(const SamplingTrajectory& trajectory);

}  // namespace ugdiml
