#include "ugdiml/diffusion.hpp"

#include <cmath>
#include <string>

#include "ugdiml/errors.hpp"

namespace ugdiml {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start,
                                    double beta_end, SigmaMode sigma_mode) {
  if (steps < 1) {
    throw RangeError("noise schedule needs at least one step, got " +
                     std::to_string(steps));
  }
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw RangeError("noise schedule requires 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[i] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas), sigma_mode);
}

namespace {

// (1 - alpha) / sqrt(1 - alpha_bar), taking its limit 0 when beta underflows.
double noise_ratio(double one_minus_alpha, double one_minus_alpha_bar) {
  return one_minus_alpha == 0.0 ? 0.0 : one_minus_alpha / std::sqrt(one_minus_alpha_bar);
}

}  // namespace

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas,
                                        SigmaMode sigma_mode) {
  if (betas.empty()) {
    throw RangeError("noise schedule needs at least one step");
  }
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw RangeError("every beta must lie in (0, 1)");
    }
  }
  return NoiseSchedule(std::move(betas), sigma_mode);
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas, SigmaMode sigma_mode)
    : betas_(std::move(betas)), sigma_mode_(sigma_mode) {
  const std::size_t n = betas_.size();
  alphas_.resize(n);
  alpha_bars_.resize(n);
  sigmas_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    running *= alphas_[i];
    alpha_bars_[i] = running;
    sigmas_[i] = sigma_mode_ == SigmaMode::Beta
                     ? betas_[i]
                     : noise_ratio(1.0 - alphas_[i], 1.0 - running) * betas_[i];
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t);
  return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bars_[t - 1];
}

double NoiseSchedule::sigma(int t) const {
  check_step(t);
  return sigmas_[t - 1];
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b,
                        const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

NoisyState q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                    const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "q_sample");
  if (t < 1) {
    throw RangeError("q_sample timestep must be >= 1");
  }
  const double ab = schedule.alpha_bar(t);
  return {std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps, t};
}

torch::Tensor q_sample(const torch::Tensor& x0, std::span<const int> timesteps,
                       const torch::Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "q_sample");
  if (x0.dim() == 0 || x0.size(0) != static_cast<int64_t>(timesteps.size())) {
    throw ShapeError("q_sample: one timestep per batch element required");
  }
  std::vector<double> signal(timesteps.size());
  std::vector<double> noise(timesteps.size());
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (timesteps[i] < 1) {
      throw RangeError("q_sample timestep must be >= 1");
    }
    const double ab = schedule.alpha_bar(timesteps[i]);
    signal[i] = std::sqrt(ab);
    noise[i] = std::sqrt(1.0 - ab);
  }
  std::vector<int64_t> bshape(static_cast<std::size_t>(x0.dim()), 1);
  bshape[0] = static_cast<int64_t>(timesteps.size());
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto s = torch::tensor(signal, opts).view(bshape).to(x0.dtype());
  auto n = torch::tensor(noise, opts).view(bshape).to(x0.dtype());
  return s * x0 + n * eps;
}

NoisyState ddpm_step(const NoisyState& x_t, const torch::Tensor& eps_pred,
                     const NoiseSchedule& schedule, const torch::Tensor& z) {
  const int t = x_t.timestep;
  if (t < 1) {
    throw RangeError("ddpm_step: cannot step below timestep 0");
  }
  require_same_shape(x_t.values, eps_pred, "ddpm_step");
  require_same_shape(x_t.values, z, "ddpm_step");
  const double a = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  const double correction = noise_ratio(1.0 - a, 1.0 - ab);
  auto mean = (x_t.values - correction * eps_pred) / std::sqrt(a);
  return {mean + schedule.sigma(t) * z, t - 1};
}

NoisyState ddim_step(const NoisyState& x_tau, const torch::Tensor& x0_hat,
                     int tau_s, int tau_prev, const NoiseSchedule& schedule) {
  if (tau_prev >= tau_s) {
    throw OrderingError("ddim_step requires tau_prev < tau_s (got " +
                        std::to_string(tau_prev) + " >= " +
                        std::to_string(tau_s) + ")");
  }
  if (tau_prev < 0) {
    throw RangeError("ddim_step: tau_prev must be >= 0");
  }
  if (x_tau.timestep != tau_s) {
    throw OrderingError("ddim_step: state timestep " +
                        std::to_string(x_tau.timestep) + " != tau_s " +
                        std::to_string(tau_s));
  }
  require_same_shape(x_tau.values, x0_hat, "ddim_step");
  const double ab_s = schedule.alpha_bar(tau_s);
  const double ab_prev = schedule.alpha_bar(tau_prev);
  const double direction = std::sqrt(1.0 - ab_prev) / std::sqrt(1.0 - ab_s);
  auto out = std::sqrt(ab_prev) * x0_hat +
             direction * (x_tau.values - std::sqrt(ab_s) * x0_hat);
  return {out, tau_prev};
}

TimestepSubsequence make_subsequence(int steps, int count) {
  if (count < 1 || count > steps) {
    throw RangeError("subsequence length " + std::to_string(count) +
                     " outside [1, " + std::to_string(steps) + "]");
  }
  const int stride = steps / count;
  TimestepSubsequence seq;
  seq.taus.reserve(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) {
    seq.taus.push_back(steps - (count - i) * stride);
  }
  return seq;
}

}  // namespace ugdiml
