#pragma once

// Experiment configuration: one JSON document fully determines a run
// together with the seed. Unknown keys are rejected with their key path.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ugdiml/diffusion.hpp"
#include "ugdiml/objectives.hpp"
#include "ugdiml/types.hpp"

namespace ugdiml {

/// Training may run a single task or alternate IML and CIML batches.
enum class TrainMode { IML, CIML, Mixed };

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaMode sigma_mode = SigmaMode::Beta;

  NoiseSchedule build() const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::IML;
  int batch_size = 12;
  double learning_rate = 6e-5;
  double weight_decay = 1e-2;
  double grad_clip = 1.0;  ///< global-norm clip; 0 disables
  int epochs = 50;
  uint64_t seed = 0;
  int checkpoint_every = 0;  ///< steps between checkpoints; 0 = end only
  std::string output_dir = "runs/default";
};

struct DataConfig {
  std::string train_manifest;
  std::string test_manifest;
  bool jpeg_aug = true;
  bool jpeg_aug_original = true;  ///< CIML: augment the original independently
};

struct SamplerConfig {
  int steps = 1;
  uint64_t seed = 0;
  double threshold = 0.5;
};

struct ExperimentConfig {
  ScheduleConfig schedule;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  SamplerConfig sampler;

  /// Missing keys keep their defaults; unknown keys and invalid values throw
  /// ConfigError naming the key path (e.g. "train.batch_size").
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Reads and parses a config file; throws IoError / ConfigError.
  static ExperimentConfig load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  /// Hex FNV-1a hash of the canonical JSON form.
  std::string hash() const;
  void validate() const;
};

std::string_view to_string(TrainMode mode);

/// Resolves a config path; bare names that do not exist relative to the
/// working directory are searched in the ':'-separated UGDIML_CONFIG_PATH.
std::filesystem::path resolve_config_path(const std::string& name);

}  // namespace ugdiml
