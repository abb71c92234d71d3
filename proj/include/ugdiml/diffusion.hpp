#pragma once

// Diffusion mathematics independent of any network: noise schedules, the
// closed-form forward process, the ancestral DDPM step and the deterministic
// DDIM step. Schedule arithmetic is carried out in double precision; tensors
// keep whatever dtype the caller hands in.

#include <torch/torch.h>

#include <span>
#include <vector>

namespace ugdiml {

/// How the ancestral step picks its noise scale.
enum class SigmaMode {
  Beta,       ///< sigma_t = beta_t
  Posterior,  ///< sigma_t = (1 - alpha_t) / sqrt(1 - alpha_bar_t) * beta_t
};

/// Precomputed beta / alpha / alpha_bar / sigma sequences. Timesteps are
/// 1-based; `alpha_bar(0)` is defined as 1 so that a DDIM step to 0 lands on
/// the clean estimate. Immutable after construction.
class NoiseSchedule {
 public:
  /// Linear beta ramp from `beta_start` to `beta_end` over `steps` steps.
  /// Throws RangeError unless 0 < beta_start <= beta_end < 1 and steps >= 1.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end,
                              SigmaMode sigma_mode = SigmaMode::Beta);

  /// Arbitrary schedule; every beta must lie in (0, 1).
  static NoiseSchedule from_betas(std::vector<double> betas,
                                  SigmaMode sigma_mode = SigmaMode::Beta);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  SigmaMode sigma_mode() const noexcept { return sigma_mode_; }

  double beta(int t) const;
  double alpha(int t) const;
  /// Valid for t in [0, T].
  double alpha_bar(int t) const;
  double sigma(int t) const;

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alphas() const noexcept { return alphas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }
  std::span<const double> sigmas() const noexcept { return sigmas_; }

 private:
  NoiseSchedule(std::vector<double> betas, SigmaMode sigma_mode);
  void check_step(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
  SigmaMode sigma_mode_;
};

/// Strictly increasing timesteps tau_1 < ... < tau_S drawn from [1, T].
struct TimestepSubsequence {
  std::vector<int> taus;

  int size() const noexcept { return static_cast<int>(taus.size()); }
};

/// Diffusion state `x_t` together with its timestep (0 means clean).
struct NoisyState {
  torch::Tensor values;
  int timestep = 0;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
NoisyState q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                    const NoiseSchedule& schedule);

/// Batched forward process: `timesteps[i]` applies to `x0[i]`.
torch::Tensor q_sample(const torch::Tensor& x0, std::span<const int> timesteps,
                       const torch::Tensor& eps, const NoiseSchedule& schedule);

/// One ancestral step x_t -> x_{t-1} given a noise prediction and fresh noise z.
NoisyState ddpm_step(const NoisyState& x_t, const torch::Tensor& eps_pred,
                     const NoiseSchedule& schedule, const torch::Tensor& z);

/// Deterministic DDIM update from tau_s to tau_prev given a clean estimate.
/// Requires tau_prev < tau_s and x_tau.timestep == tau_s.
NoisyState ddim_step(const NoisyState& x_tau, const torch::Tensor& x0_hat,
                     int tau_s, int tau_prev, const NoiseSchedule& schedule);

/// S evenly spaced timesteps ending at T: tau_i = T - (S - i) * floor(T / S).
TimestepSubsequence make_subsequence(int steps, int count);

}  // namespace ugdiml
