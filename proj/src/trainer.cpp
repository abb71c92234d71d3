#include "ugdiml/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ugdiml/errors.hpp"
#include "ugdiml/objectives.hpp"

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace ugdiml {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

std::unique_ptr<torch::optim::AdamW> make_optimizer(UgdImlModel& model,
                                                    const TrainConfig& train) {
  return std::make_unique<torch::optim::AdamW>(
      model->parameters(), torch::optim::AdamWOptions(train.learning_rate)
                               .weight_decay(train.weight_decay));
}

// Everything that must agree between a checkpoint and the run resuming it.
nlohmann::json resume_signature(const ExperimentConfig& c) {
  auto j = c.to_json();
  j.erase("data");
  j.erase("sampler");
  j["train"].erase("epochs");
  j["train"].erase("checkpoint_every");
  j["train"].erase("output_dir");
  return j;
}

std::string format_step_path(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%08lld.ckpt", static_cast<long long>(step));
  return buf;
}

}  // namespace

TaskMode batch_mode(TrainMode mode, int64_t step) {
  switch (mode) {
    case TrainMode::IML: return TaskMode::IML;
    case TrainMode::CIML: return TaskMode::CIML;
    case TrainMode::Mixed: return step % 2 == 0 ? TaskMode::IML : TaskMode::CIML;
  }
  return TaskMode::IML;
}

TrainState make_train_state(const ExperimentConfig& config) {
  config.validate();
  TrainState state;
  state.config = config;
  torch::manual_seed(config.train.seed);
  state.model = UgdImlModel(config.model, config.schedule.steps);
  state.optimizer = make_optimizer(state.model, config.train);
  state.generator = at::make_generator<at::CPUGeneratorImpl>(mix(config.train.seed, 1));
  return state;
}

torch::Tensor sample_timesteps(torch::Generator& generator, int64_t count, int steps) {
  return torch::randint(1, static_cast<int64_t>(steps) + 1, {count}, generator,
                        torch::TensorOptions().dtype(torch::kLong));
}

StepDiagnostics train_step(const Batch& batch, TrainState& state,
                           const NoiseSchedule& schedule) {
  auto& model = state.model;
  if (model->diffusion_steps() != schedule.steps()) {
    throw CheckpointError("model and schedule disagree on the number of steps");
  }
  model->train();
  const int64_t b = batch.forged.size(0);
  const int64_t height = batch.masks.size(1);
  const int64_t width = batch.masks.size(2);

  auto conditions = model->condition(batch.mode, batch.forged, batch.original);
  auto x0 = model->embed(batch.masks).values;
  auto t = sample_timesteps(state.generator, b, schedule.steps());
  auto eps = torch::randn(x0.sizes(), state.generator, x0.options());
  std::vector<int> timesteps(static_cast<std::size_t>(b));
  for (int64_t i = 0; i < b; ++i) timesteps[i] = static_cast<int>(t[i].item<int64_t>());
  auto xt = q_sample(x0, timesteps, eps, schedule);

  auto logits = model->denoise(xt, conditions, t);
  auto upsampled = F::interpolate(logits.values,
                                  F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{height, width})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  auto prob = torch::softmax(upsampled, 1).select(1, 1);
  auto loss = combined_loss(prob, batch.masks, state.config.loss);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << " (timesteps:";
    for (int tv : timesteps) msg << ' ' << tv;
    msg << "; samples:";
    for (const auto& id : batch.ids) msg << ' ' << id;
    msg << ')';
    throw NonFiniteLossError(msg.str());
  }

  state.optimizer->zero_grad();
  loss.backward();
  if (state.config.train.grad_clip > 0.0) {
    torch::nn::utils::clip_grad_norm_(model->parameters(), state.config.train.grad_clip);
  }
  state.optimizer->step();

  state.loss_ema = state.step == 0 ? value : 0.98 * state.loss_ema + 0.02 * value;
  state.last_loss = value;
  ++state.step;
  return {value, timesteps};
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("meta_version", c10::IValue(kCheckpointVersion));
  archive.write("meta_config", c10::IValue(state.config.to_json().dump()));
  archive.write("meta_config_hash", c10::IValue(state.config.hash()));
  archive.write("meta_step", c10::IValue(state.step));
  archive.write("meta_epoch", c10::IValue(state.epoch));
  archive.write("meta_batch_in_epoch", c10::IValue(state.batch_in_epoch));
  archive.write("meta_last_loss", c10::IValue(state.last_loss));
  archive.write("meta_loss_ema", c10::IValue(state.loss_ema));

  torch::serialize::OutputArchive model_archive;
  state.model->save(model_archive);
  archive.write("model", model_archive);
  torch::serialize::OutputArchive optimizer_archive;
  state.optimizer->save(optimizer_archive);
  archive.write("optimizer", optimizer_archive);
  archive.write("rng", state.generator.get_state());

  const fs::path tmp = path.string() + ".tmp";
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
}

namespace {

struct OpenedCheckpoint {
  torch::serialize::InputArchive archive;
  ExperimentConfig config;
  std::string hash;
};

c10::IValue read_value(torch::serialize::InputArchive& archive, const std::string& key,
                       const fs::path& path) {
  c10::IValue v;
  if (!archive.try_read(key, v)) {
    throw CheckpointError("checkpoint " + path.string() + " lacks '" + key + "'");
  }
  return v;
}

void open_checkpoint(const fs::path& path, OpenedCheckpoint& out) {
  if (!fs::exists(path)) {
    throw IoError("checkpoint not found: " + path.string());
  }
  try {
    out.archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read checkpoint " + path.string() + ": " +
                          e.what_without_backtrace());
  }
  const auto version = read_value(out.archive, "meta_version", path).toInt();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto text = read_value(out.archive, "meta_config", path).toStringRef();
  out.config = ExperimentConfig::from_json(nlohmann::json::parse(text));
  out.hash = read_value(out.archive, "meta_config_hash", path).toStringRef();
}

void load_model(torch::serialize::InputArchive& archive, UgdImlModel& model,
                const fs::path& path) {
  torch::serialize::InputArchive model_archive;
  try {
    archive.read("model", model_archive);
    model->load(model_archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("incompatible model weights in " + path.string() + ": " +
                          e.what_without_backtrace());
  }
}

}  // namespace

TrainState load_checkpoint(const fs::path& path) {
  OpenedCheckpoint ck;
  open_checkpoint(path, ck);
  TrainState state = make_train_state(ck.config);
  load_model(ck.archive, state.model, path);
  try {
    torch::serialize::InputArchive optimizer_archive;
    ck.archive.read("optimizer", optimizer_archive);
    state.optimizer->load(optimizer_archive);
    torch::Tensor rng;
    ck.archive.read("rng", rng);
    state.generator.set_state(rng);
  } catch (const c10::Error& e) {
    throw CheckpointError("incompatible optimizer state in " + path.string() + ": " +
                          e.what_without_backtrace());
  }
  state.step = read_value(ck.archive, "meta_step", path).toInt();
  state.epoch = read_value(ck.archive, "meta_epoch", path).toInt();
  state.batch_in_epoch = read_value(ck.archive, "meta_batch_in_epoch", path).toInt();
  state.last_loss = read_value(ck.archive, "meta_last_loss", path).toDouble();
  state.loss_ema = read_value(ck.archive, "meta_loss_ema", path).toDouble();
  return state;
}

InferenceBundle load_for_inference(const fs::path& path) {
  OpenedCheckpoint ck;
  open_checkpoint(path, ck);
  InferenceBundle bundle;
  bundle.config = ck.config;
  bundle.config_hash = ck.hash;
  bundle.model = UgdImlModel(ck.config.model, ck.config.schedule.steps);
  load_model(ck.archive, bundle.model, path);
  bundle.model->eval();
  bundle.step = read_value(ck.archive, "meta_step", path).toInt();
  return bundle;
}

fs::path train_loop(const ExperimentConfig& config, const DatasetManifest& manifest,
                    const TrainLoopOptions& options) {
  config.validate();
  const auto schedule = config.schedule.build();
  const fs::path out_dir = config.train.output_dir;
  fs::create_directories(out_dir / "checkpoints");
  const fs::path final_path = out_dir / "final.ckpt";

  TrainState state;
  if (options.resume_from) {
    state = load_checkpoint(*options.resume_from);
    if (resume_signature(state.config) != resume_signature(config)) {
      throw ConfigError("resume: configuration differs from the checkpoint's (" +
                        options.resume_from->string() + ")");
    }
    state.config = config;
  } else {
    state = make_train_state(config);
  }

  if (state.epoch >= config.train.epochs) {
    save_checkpoint(state, final_path);
    return final_path;
  }
  if (manifest.size() == 0) {
    throw RangeError("training manifest is empty");
  }

  RawSampleCache cache(manifest);
  const ImageNormalization norm{config.model.image_mean, config.model.image_std};
  std::ofstream log(out_dir / "train_log.jsonl",
                    options.resume_from ? std::ios::app : std::ios::trunc);
  if (!log) {
    throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
  }

  const uint64_t seed = config.train.seed;
  while (state.epoch < config.train.epochs) {
    const auto plan = iterate(manifest, static_cast<std::size_t>(config.train.batch_size),
                              mix(seed, 1000 + static_cast<uint64_t>(state.epoch)));
    double epoch_loss = 0.0;
    int64_t epoch_batches = 0;
    for (auto b = static_cast<std::size_t>(state.batch_in_epoch); b < plan.size(); ++b) {
      if (options.max_steps > 0 && state.step >= options.max_steps) {
        const auto path = out_dir / "checkpoints" / format_step_path(state.step);
        save_checkpoint(state, path);
        return path;
      }
      const TaskMode mode = batch_mode(config.train.mode, state.step);
      std::vector<ForgerySample> samples;
      samples.reserve(plan[b].size());
      for (std::size_t idx : plan[b]) {
        RawSample raw = cache[idx];
        if (mode == TaskMode::IML) raw.original.reset();
        std::mt19937_64 rng(mix(mix(seed, static_cast<uint64_t>(state.epoch)), idx));
        samples.push_back(preprocess(raw, static_cast<int>(config.model.input_size),
                                     config.data.jpeg_aug, rng, norm,
                                     config.data.jpeg_aug_original));
      }
      const auto diag = train_step(collate(samples, mode), state, schedule);
      state.batch_in_epoch = static_cast<int64_t>(b) + 1;
      epoch_loss += diag.loss;
      ++epoch_batches;

      nlohmann::json rec{{"step", state.step},
                         {"epoch", state.epoch},
                         {"loss", diag.loss},
                         {"lr", config.train.learning_rate},
                         {"mode", std::string(to_string(mode))}};
      log << rec.dump() << '\n';

      if (config.train.checkpoint_every > 0 &&
          state.step % config.train.checkpoint_every == 0) {
        save_checkpoint(state, out_dir / "checkpoints" / format_step_path(state.step));
      }
    }
    if (options.verbose && epoch_batches > 0) {
      std::cerr << "epoch " << state.epoch + 1 << "/" << config.train.epochs
                << " mean loss " << epoch_loss / static_cast<double>(epoch_batches)
                << " (step " << state.step << ")\n";
    }
    ++state.epoch;
    state.batch_in_epoch = 0;
  }
  log.flush();
  save_checkpoint(state, final_path);
  return final_path;
}

}  // namespace ugdiml
