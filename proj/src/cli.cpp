#include "ugdiml/cli.hpp"

#include <CLI11.hpp>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "ugdiml/errors.hpp"
#include "ugdiml/trainer.hpp"

namespace fs = std::filesystem;

namespace ugdiml {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

cv::Mat plane_u8(const torch::Tensor& t) {
  auto c = t.to(torch::kUInt8).contiguous();
  return cv::Mat(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_8U,
                 c.data_ptr<uint8_t>())
      .clone();
}

void write_heatmap(const torch::Tensor& values01, const fs::path& path) {
  auto scaled = (values01.clamp(0.0, 1.0) * 255.0).round();
  cv::Mat gray = plane_u8(scaled), color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), color)) {
    throw IoError("cannot write " + path.string());
  }
}

std::string step_file(std::size_t index, int timestep) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "step_%02zu_t%04d.png", index + 1, timestep);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

MetricSummary evaluate(UgdImlModel& model, const ExperimentConfig& config,
                       const DatasetManifest& manifest, const EvalOptions& options,
                       const std::string& dataset_name) {
  if (manifest.size() == 0) {
    throw RangeError("evaluation manifest is empty");
  }
  if (options.batch_size < 1) {
    throw RangeError("evaluation batch size must be positive");
  }
  torch::NoGradGuard no_grad;
  model->eval();
  const auto schedule = config.schedule.build();
  const ImageNormalization norm{config.model.image_mean, config.model.image_std};
  const int size = static_cast<int>(config.model.input_size);
  const std::string dataset = dataset_name.empty() ? manifest.split : dataset_name;

  std::vector<ImageScores> scores;
  scores.reserve(manifest.size());
  std::mt19937_64 unused_rng(0);
  const auto bs = static_cast<std::size_t>(options.batch_size);
  for (std::size_t start = 0, k = 0; start < manifest.size(); start += bs, ++k) {
    const std::size_t end = std::min(manifest.size(), start + bs);
    std::vector<ForgerySample> samples;
    for (std::size_t i = start; i < end; ++i) {
      RawSample raw = load_raw(manifest, i);
      if (options.mode == TaskMode::IML) raw.original.reset();
      samples.push_back(preprocess(raw, size, false, unused_rng, norm));
    }
    const Batch batch = collate(samples, options.mode);
    const auto conditions = model->condition(options.mode, batch.forged, batch.original);
    SamplerOptions so;
    so.steps = options.steps;
    so.seed = splitmix64(options.seed ^ splitmix64(k));
    so.threshold = options.threshold;
    so.height = size;
    so.width = size;
    const torch::Tensor prob =
        options.zero_noise ? sample_zero_noise(model, conditions, so).probability
                           : sample(model, conditions, schedule, so).final_probability();

    for (std::size_t j = 0; j < samples.size(); ++j) {
      const auto p = prob[static_cast<int64_t>(j)].to(torch::kFloat).contiguous();
      const auto g = batch.masks[static_cast<int64_t>(j)].contiguous();
      const std::span<const float> pred(p.data_ptr<float>(), static_cast<std::size_t>(p.numel()));
      const std::span<const uint8_t> gt(g.data_ptr<uint8_t>(), static_cast<std::size_t>(g.numel()));
      ImageScores s;
      s.dataset = dataset;
      s.image_id = batch.ids[j];
      s.f1 = pixel_f1(pred, gt, options.threshold);
      s.iou = pixel_iou(pred, gt, options.threshold);
      const auto positives = g.sum().item<int64_t>();
      if (positives > 0 && positives < g.numel()) s.auc = pixel_auc(pred, gt);
      scores.push_back(std::move(s));
    }
  }
  return aggregate(scores);
}

namespace {

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string output_dir;
  int64_t max_steps = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto config = ExperimentConfig::load(resolve_config_path(a.config));
  if (!a.output_dir.empty()) config.train.output_dir = a.output_dir;
  if (config.data.train_manifest.empty()) {
    throw ConfigError("data.train_manifest: required for training");
  }
  const auto manifest = load_manifest(config.data.train_manifest);
  TrainLoopOptions options;
  if (!a.resume.empty()) options.resume_from = fs::path(a.resume);
  options.max_steps = a.max_steps;
  options.verbose = !a.quiet;
  fs::create_directories(config.train.output_dir);
  write_text(fs::path(config.train.output_dir) / "config.json", config.to_json().dump(2) + "\n");
  const auto path = train_loop(config, manifest, options);
  std::cout << path.string() << '\n';
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::string forged;
  std::string original;
  std::string mode;
  std::string out_dir = "infer_out";
  std::optional<int> steps;
  std::optional<uint64_t> seed;
  std::optional<double> threshold;
  bool zero_noise = false;
  bool dump_trajectory = false;
  bool uncertainty = false;
};

int cmd_infer(const InferArgs& a) {
  const TaskMode mode = a.mode.empty()
                            ? (a.original.empty() ? TaskMode::IML : TaskMode::CIML)
                            : parse_task_mode(a.mode);
  if (mode == TaskMode::CIML && a.original.empty()) {
    throw ModeError("CIML inference needs --original");
  }
  if (mode == TaskMode::IML && !a.original.empty()) {
    throw ModeError("IML inference takes a single image; drop --original or use --mode CIML");
  }
  if (a.zero_noise && (a.dump_trajectory || a.uncertainty)) {
    throw ModeError("--zero-noise has no trajectory; it cannot be combined with "
                    "--dump-trajectory or --uncertainty");
  }

  auto bundle = load_for_inference(a.checkpoint);
  const auto& config = bundle.config;
  RawSample raw;
  raw.forged = read_rgb(a.forged);
  if (!a.original.empty()) {
    raw.original = read_rgb(a.original);
    if (raw.original->size() != raw.forged.size()) {
      throw ShapeError("forged and original images differ in size");
    }
  }
  raw.mask = cv::Mat::zeros(raw.forged.size(), CV_8U);
  raw.mode = mode;
  raw.source_id = fs::path(a.forged).stem().string();

  std::mt19937_64 unused_rng(0);
  const ImageNormalization norm{config.model.image_mean, config.model.image_std};
  std::vector<ForgerySample> samples{
      preprocess(raw, static_cast<int>(config.model.input_size), false, unused_rng, norm)};
  const Batch batch = collate(samples, mode);

  torch::NoGradGuard no_grad;
  const auto conditions = bundle.model->condition(mode, batch.forged, batch.original);
  SamplerOptions so;
  so.steps = a.steps.value_or(config.sampler.steps);
  so.seed = a.seed.value_or(config.sampler.seed);
  so.threshold = a.threshold.value_or(config.sampler.threshold);
  so.height = raw.forged.rows;
  so.width = raw.forged.cols;

  const fs::path out = a.out_dir;
  fs::create_directories(out);
  if (a.zero_noise) {
    const auto result = sample_zero_noise(bundle.model, conditions, so);
    write_mask(plane_u8(result.mask[0]), out / "mask.png");
    write_heatmap(result.probability[0], out / "probability.png");
  } else {
    const auto schedule = config.schedule.build();
    const auto traj = sample(bundle.model, conditions, schedule, so);
    write_mask(plane_u8(traj.final_mask()[0]), out / "mask.png");
    write_heatmap(traj.final_probability()[0], out / "probability.png");
    if (a.uncertainty) {
      write_heatmap(uncertainty_map(traj)[0], out / "uncertainty.png");
    }
    if (a.dump_trajectory) {
      fs::create_directories(out / "trajectory");
      for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        write_mask(plane_u8(traj.steps[i].mask[0]),
                   out / "trajectory" / step_file(i, traj.steps[i].timestep));
      }
    }
  }
  std::cout << (out / "mask.png").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string mode;
  std::string dataset;
  std::string out_dir = "eval_out";
  std::optional<int> steps;
  std::optional<uint64_t> seed;
  std::optional<double> threshold;
  bool zero_noise = false;
  int batch_size = 16;
};

int cmd_eval(const EvalArgs& a) {
  auto bundle = load_for_inference(a.checkpoint);
  const auto& config = bundle.config;
  const std::string manifest_path = a.manifest.empty() ? config.data.test_manifest : a.manifest;
  if (manifest_path.empty()) {
    throw ConfigError("data.test_manifest: no manifest given (use --manifest)");
  }
  const auto manifest = load_manifest(manifest_path);
  EvalOptions options;
  options.mode = !a.mode.empty() ? parse_task_mode(a.mode)
                 : config.train.mode == TrainMode::CIML ? TaskMode::CIML
                                                        : TaskMode::IML;
  options.steps = a.steps.value_or(config.sampler.steps);
  options.seed = a.seed.value_or(config.sampler.seed);
  options.threshold = a.threshold.value_or(config.sampler.threshold);
  options.zero_noise = a.zero_noise;
  options.batch_size = a.batch_size;

  const auto summary = evaluate(bundle.model, config, manifest, options, a.dataset);
  const fs::path out = a.out_dir;
  fs::create_directories(out);
  const auto report = format_report(summary);
  write_text(out / "report.txt", report);
  write_text(out / "metrics.jsonl", report_records(summary));
  std::cout << report;
  return 0;
}

struct VisualizeArgs {
  std::string forged;
  std::string pred;
  std::string gt;
  std::string uncertainty;
  std::string out = "panel.png";
};

int cmd_visualize(const VisualizeArgs& a) {
  const cv::Mat forged = read_rgb(a.forged);
  const cv::Size size = forged.size();
  auto fit = [&](cv::Mat m) {
    if (m.size() != size) cv::resize(m, m, size, 0, 0, cv::INTER_NEAREST);
    return m;
  };
  auto mask_rgb = [&](const std::string& path) {
    cv::Mat m = fit(read_mask(path)) * 255, rgb;
    cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB);
    return rgb;
  };

  std::vector<cv::Mat> tiles{forged};
  if (!a.gt.empty()) tiles.push_back(mask_rgb(a.gt));
  const cv::Mat pred = fit(read_mask(a.pred));
  tiles.push_back(mask_rgb(a.pred));
  cv::Mat overlay = forged.clone();
  overlay.setTo(cv::Scalar(255, 0, 0), pred);
  cv::addWeighted(forged, 0.5, overlay, 0.5, 0.0, overlay);
  tiles.push_back(overlay);
  if (!a.uncertainty.empty()) {
    cv::Mat heat = cv::imread(a.uncertainty, cv::IMREAD_COLOR);
    if (heat.empty()) throw IoError("cannot decode " + a.uncertainty);
    cv::cvtColor(heat, heat, cv::COLOR_BGR2RGB);
    cv::resize(heat, heat, size, 0, 0, cv::INTER_LINEAR);
    tiles.push_back(heat);
  }
  cv::Mat panel;
  cv::hconcat(tiles, panel);
  write_rgb(panel, a.out);
  std::cout << a.out << '\n';
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  std::string split = "train";
  std::string mode = "CIML";
  int count = 100;
  int size = 64;
  int bases = 16;
  uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  std::mt19937_64 rng(a.seed);
  const auto bases = make_base_images(rng, a.bases, a.size);
  const auto manifest =
      synth_forgery(bases, rng, a.count, a.out_dir, a.split, parse_task_mode(a.mode));
  std::cout << (fs::path(a.out_dir) / "manifest.jsonl").string() << " (" << manifest.size()
            << " records)\n";
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Unified diffusion-based image manipulation localization"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("-c,--config", train.config, "Config file (searched in UGDIML_CONFIG_PATH)")
      ->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
  train_cmd->add_option("--output-dir", train.output_dir, "Override train.output_dir");
  train_cmd->add_option("--max-steps", train.max_steps, "Stop after this many optimizer steps")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_flag("-q,--quiet", train.quiet, "No per-epoch progress");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Localize manipulations in one image (pair)");
  infer_cmd->add_option("--checkpoint", infer.checkpoint)->required();
  infer_cmd->add_option("--forged", infer.forged, "Image to analyse")->required();
  infer_cmd->add_option("--original", infer.original, "Pristine original (CIML)");
  infer_cmd->add_option("--mode", infer.mode, "IML or CIML (default: from inputs)");
  infer_cmd->add_option("--steps", infer.steps, "Sampling steps S")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--seed", infer.seed, "Sampling seed");
  infer_cmd->add_option("--threshold", infer.threshold)->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("-o,--out-dir", infer.out_dir);
  infer_cmd->add_flag("--zero-noise", infer.zero_noise, "Single call on an all-zero state");
  infer_cmd->add_flag("--dump-trajectory", infer.dump_trajectory, "Write every step's mask");
  infer_cmd->add_flag("--uncertainty", infer.uncertainty, "Write the uncertainty heatmap");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--manifest", eval.manifest, "Default: data.test_manifest");
  eval_cmd->add_option("--mode", eval.mode, "IML or CIML");
  eval_cmd->add_option("--dataset", eval.dataset, "Dataset label in the report");
  eval_cmd->add_option("--steps", eval.steps)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval.seed);
  eval_cmd->add_option("--threshold", eval.threshold)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--batch-size", eval.batch_size)->check(CLI::PositiveNumber);
  eval_cmd->add_option("-o,--out-dir", eval.out_dir);
  eval_cmd->add_flag("--zero-noise", eval.zero_noise);

  VisualizeArgs vis;
  auto* vis_cmd = app.add_subcommand("visualize", "Side-by-side panel of inputs and outputs");
  vis_cmd->add_option("--forged", vis.forged)->required();
  vis_cmd->add_option("--pred", vis.pred, "Predicted mask")->required();
  vis_cmd->add_option("--gt", vis.gt, "Ground-truth mask");
  vis_cmd->add_option("--uncertainty", vis.uncertainty, "Uncertainty heatmap");
  vis_cmd->add_option("-o,--out", vis.out);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic splicing dataset");
  synth_cmd->add_option("-o,--out-dir", synth.out_dir)->required();
  synth_cmd->add_option("--count", synth.count)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--size", synth.size)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--bases", synth.bases)->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--split", synth.split)->check(CLI::IsMember({"train", "test"}));
  synth_cmd->add_option("--mode", synth.mode)->check(CLI::IsMember({"IML", "CIML"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*infer_cmd) return cmd_infer(infer);
    if (*eval_cmd) return cmd_eval(eval);
    if (*vis_cmd) return cmd_visualize(vis);
    if (*synth_cmd) return cmd_synth(synth);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ModeError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace ugdiml
