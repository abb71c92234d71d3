#include "ugdiml/objectives.hpp"

#include "ugdiml/errors.hpp"

namespace ugdiml {

void LossConfig::validate() const {
  if (!(mu > 0.0)) throw ConfigError("loss.mu: must be positive");
  if (!(eta > 0.0)) throw ConfigError("loss.eta: must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("loss.lambda: must lie in [0, 1]");
  }
  if (!(smooth >= 0.0)) throw ConfigError("loss.smooth: must be non-negative");
  if (!(clip_eps > 0.0 && clip_eps < 0.5)) {
    throw ConfigError("loss.clip_eps: must lie in (0, 0.5)");
  }
}

namespace {

// Returns [B, H*W] views of matching prediction / ground-truth tensors.
std::pair<torch::Tensor, torch::Tensor> flatten_pair(const torch::Tensor& pred,
                                                     const torch::Tensor& gt) {
  if (!pred.sizes().equals(gt.sizes())) {
    throw ShapeError("prediction and ground truth shapes differ");
  }
  if (pred.dim() != 2 && pred.dim() != 3) {
    throw ShapeError("expected [H, W] or [B, H, W] inputs");
  }
  auto p = pred.dim() == 2 ? pred.unsqueeze(0) : pred;
  auto g = gt.to(pred.dtype());
  g = g.dim() == 2 ? g.unsqueeze(0) : g;
  return {p.flatten(1), g.flatten(1)};
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                        double smooth) {
  auto [p, g] = flatten_pair(pred, gt);
  auto inter = (p * g).sum(1);
  auto denom = p.sum(1) + g.sum(1) + smooth;
  auto per_image = 1.0 - (2.0 * inter + smooth) / denom;
  return per_image.mean();
}

torch::Tensor weighted_ce(const torch::Tensor& pred, const torch::Tensor& gt,
                          double mu, double eta, double clip_eps) {
  auto [p, g] = flatten_pair(pred, gt);
  auto pc = p.clamp(clip_eps, 1.0 - clip_eps);
  auto per_pixel = -(mu * g * torch::log(pc) + eta * (1.0 - g) * torch::log(1.0 - pc));
  return per_pixel.mean(1).mean();
}

torch::Tensor combined_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                            const LossConfig& config) {
  config.validate();
  return config.lambda * weighted_ce(pred, gt, config.mu, config.eta, config.clip_eps) +
         (1.0 - config.lambda) * dice_loss(pred, gt, config.smooth);
}

}  // namespace ugdiml
