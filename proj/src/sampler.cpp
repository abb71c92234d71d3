#include "ugdiml/sampler.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <string>

#include "ugdiml/errors.hpp"

namespace ugdiml {

namespace {

std::pair<int64_t, int64_t> output_size(const UgdImlModel& model,
                                        const GuidanceConditions& conditions,
                                        const SamplerOptions& options) {
  const int64_t stride = model->config().latent_stride;
  const int64_t h = options.height > 0 ? options.height : conditions.forged.size(2) * stride;
  const int64_t w = options.width > 0 ? options.width : conditions.forged.size(3) * stride;
  return {h, w};
}

torch::Tensor timesteps_like(int64_t batch, int t) {
  return torch::full({batch}, t, torch::kLong);
}

}  // namespace

SamplingTrajectory sample(UgdImlModel& model, const GuidanceConditions& conditions,
                          const NoiseSchedule& schedule,
                          const SamplerOptions& options) {
  if (model->diffusion_steps() != schedule.steps()) {
    throw CheckpointError("model was trained for " +
                          std::to_string(model->diffusion_steps()) +
                          " diffusion steps, schedule has " +
                          std::to_string(schedule.steps()));
  }
  const auto taus = make_subsequence(schedule.steps(), options.steps).taus;
  const auto [height, width] = output_size(model, conditions, options);

  torch::NoGradGuard no_grad;
  model->eval();
  const auto& c = conditions.forged;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  NoisyState x{torch::randn({c.size(0), model->config().embed_dim, c.size(2), c.size(3)},
                            gen, c.options()),
               taus.back()};

  SamplingTrajectory traj;
  for (int s = static_cast<int>(taus.size()) - 1; s >= 0; --s) {
    const int tau = taus[static_cast<std::size_t>(s)];
    const int tau_prev = s > 0 ? taus[static_cast<std::size_t>(s - 1)] : 0;
    auto logits = model->denoise(x.values, conditions, timesteps_like(c.size(0), tau));
    auto prob = manipulation_probability(logits, height, width);
    traj.steps.push_back(
        {tau, logits, prob, prob.ge(options.threshold).to(torch::kUInt8)});
    x = ddim_step(x, model->reembed(logits).values, tau, tau_prev, schedule);
  }
  return traj;
}

ZeroNoiseResult sample_zero_noise(UgdImlModel& model,
                                  const GuidanceConditions& conditions,
                                  const SamplerOptions& options) {
  const auto [height, width] = output_size(model, conditions, options);
  torch::NoGradGuard no_grad;
  model->eval();
  const auto& c = conditions.forged;
  auto zeros = torch::zeros({c.size(0), model->config().embed_dim, c.size(2), c.size(3)},
                            c.options());
  auto logits = model->denoise(zeros, conditions,
                               timesteps_like(c.size(0), model->diffusion_steps()));
  auto prob = manipulation_probability(logits, height, width);
  return {prob, prob.ge(options.threshold).to(torch::kUInt8)};
}

torch::Tensor uncertainty_map(const SamplingTrajectory& trajectory) {
  if (trajectory.steps.empty()) {
    throw RangeError("uncertainty map needs at least one sampling step");
  }
  const auto& first = trajectory.steps.front().mask;
  auto flips = torch::zeros(first.sizes(), torch::kFloat32);
  for (std::size_t s = 1; s < trajectory.steps.size(); ++s) {
    flips += trajectory.steps[s].mask.ne(trajectory.steps[s - 1].mask).to(torch::kFloat32);
  }
  if (trajectory.steps.size() > 1) {
    flips /= static_cast<float>(trajectory.steps.size() - 1);
  }
  return flips;
}

}  // namespace ugdiml
