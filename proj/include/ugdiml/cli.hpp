#pragma once

// Evaluation driver and the `ugdiml` command line (train / infer / eval /
// visualize / synth).

#include <cstdint>
#include <string>

#include "ugdiml/config.hpp"
#include "ugdiml/datasets.hpp"
#include "ugdiml/metrics.hpp"
#include "ugdiml/model.hpp"
#include "ugdiml/sampler.hpp"

namespace ugdiml {

struct EvalOptions {
  TaskMode mode = TaskMode::IML;
  int steps = 1;
  uint64_t seed = 0;
  double threshold = 0.5;
  bool zero_noise = false;
  int batch_size = 16;
};

/// Scores every manifest record at the model's input resolution. Sampling
/// noise for batch k is seeded from (seed, k), so results depend only on the
/// options and the manifest order.
MetricSummary evaluate(UgdImlModel& model, const ExperimentConfig& config,
                       const DatasetManifest& manifest, const EvalOptions& options,
                       const std::string& dataset_name = "");

/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
int run_cli(int argc, char** argv);

}  // namespace ugdiml
