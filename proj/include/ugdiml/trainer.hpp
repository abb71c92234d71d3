#pragma once

// Training: one step embeds the ground truth, noises it at a uniformly drawn
// timestep, predicts the clean mask and descends on the combined loss. The
// loop adds shuffling, augmentation, logging and resumable checkpoints.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ugdiml/config.hpp"
#include "ugdiml/datasets.hpp"
#include "ugdiml/diffusion.hpp"
#include "ugdiml/model.hpp"

namespace ugdiml {

/// Checkpoint archive layout version.
inline constexpr int64_t kCheckpointVersion = 1;

struct TrainState {
  ExperimentConfig config;
  UgdImlModel model{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer;
  torch::Generator generator;  ///< draws timesteps and noise
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t batch_in_epoch = 0;  ///< batches of `epoch` already consumed
  double last_loss = 0.0;
  double loss_ema = 0.0;
};

/// Fresh model (initialized from `config.train.seed`) and optimizer.
TrainState make_train_state(const ExperimentConfig& config);

/// `count` timesteps drawn uniformly from [1, T].
torch::Tensor sample_timesteps(torch::Generator& generator, int64_t count, int steps);

struct StepDiagnostics {
  double loss = 0.0;
  std::vector<int> timesteps;
};

/// One optimizer step on a mode-homogeneous batch. Throws NonFiniteLossError
/// (naming the timesteps and sample ids) without touching the weights when the
/// loss is not finite.
StepDiagnostics train_step(const Batch& batch, TrainState& state,
                           const NoiseSchedule& schedule);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Restores model, optimizer, generator and counters. The stored config
/// rebuilds the architecture.
TrainState load_checkpoint(const std::filesystem::path& path);

/// Loads only the configuration and weights, for inference.
struct InferenceBundle {
  ExperimentConfig config;
  UgdImlModel model{nullptr};
  int64_t step = 0;
  std::string config_hash;
};
InferenceBundle load_for_inference(const std::filesystem::path& path);

struct TrainLoopOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many optimizer steps in total (0 = no limit).
  int64_t max_steps = 0;
  bool verbose = false;
};

/// Runs training until `config.train.epochs` epochs are done, writing
/// `<output_dir>/train_log.jsonl`, periodic checkpoints under
/// `<output_dir>/checkpoints/` and `<output_dir>/final.ckpt`. Returns the path
/// of the final checkpoint.
std::filesystem::path train_loop(const ExperimentConfig& config,
                                 const DatasetManifest& manifest,
                                 const TrainLoopOptions& options = {});

/// Task mode of the batch following `step` optimizer steps.
TaskMode batch_mode(TrainMode mode, int64_t step);

}  // namespace ugdiml
