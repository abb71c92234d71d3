#pragma once

#include <torch/torch.h>

namespace ugdiml {

/// GroupNorm with the largest group count in {8, 4, 2, 1} dividing `channels`.
inline torch::nn::GroupNorm group_norm(int64_t channels) {
  int64_t groups = 1;
  for (int64_t g : {8, 4, 2}) {
    if (channels % g == 0) {
      groups = g;
      break;
    }
  }
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels));
}

inline torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace ugdiml
