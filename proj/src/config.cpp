#include "ugdiml/config.hpp"

#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ugdiml/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ugdiml {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::IML: return "IML";
    case TrainMode::CIML: return "CIML";
    case TrainMode::Mixed: return "mixed";
  }
  return "?";
}

NoiseSchedule ScheduleConfig::build() const {
  return NoiseSchedule::linear(steps, beta_start, beta_end, sigma_mode);
}

namespace {

// Walks one JSON object, remembering which keys were consumed so the rest can
// be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError((path_.empty() ? std::string("config") : path_) +
                        ": expected an object");
    }
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(key_path(key) + ": " + why);
  }

  void read(const std::string& key, int& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, int64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int64_t>();
    }
  }
  void read(const std::string& key, uint64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned() &&
          !(v->is_number_integer() && v->get<int64_t>() >= 0)) {
        fail(key, "expected a non-negative integer");
      }
      out = v->get<uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (auto* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true/false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void read(const std::string& key, std::vector<T>& out) {
    if (auto* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array");
      std::vector<T> values;
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "expected numeric entries");
        values.push_back(e.get<T>());
      }
      out = std::move(values);
    }
  }
  void read(const std::string& key, std::array<double, 3>& out) {
    std::vector<double> v(out.begin(), out.end());
    read(key, v);
    if (v.size() != 3) fail(key, "expected 3 entries");
    std::copy(v.begin(), v.end(), out.begin());
  }
  template <typename Parse>
  void read_enum(const std::string& key, Parse parse) {
    if (auto* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      try {
        parse(v->get<std::string>());
      } catch (const ConfigError& e) {
        fail(key, e.what());
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    if (auto* v = find(key)) return Section(*v, key_path(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) fail(key, "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

SigmaMode parse_sigma_mode(const std::string& s) {
  if (s == "beta") return SigmaMode::Beta;
  if (s == "posterior") return SigmaMode::Posterior;
  throw ConfigError("unknown sigma mode '" + s + "'");
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "IML" || s == "iml") return TrainMode::IML;
  if (s == "CIML" || s == "ciml") return TrainMode::CIML;
  if (s == "mixed") return TrainMode::Mixed;
  throw ConfigError("unknown train mode '" + s + "'");
}

EmbedNorm parse_embed_norm(const std::string& s) {
  if (s == "per_channel") return EmbedNorm::PerChannel;
  if (s == "global") return EmbedNorm::Global;
  throw ConfigError("unknown embedding normalization '" + s + "'");
}

DecoderAttention parse_attention(const std::string& s) {
  if (s == "global") return DecoderAttention::Global;
  if (s == "deformable") return DecoderAttention::Deformable;
  throw ConfigError("unknown decoder attention '" + s + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");

  if (auto s = root.child("schedule")) {
    s->read("steps", c.schedule.steps);
    s->read("beta_start", c.schedule.beta_start);
    s->read("beta_end", c.schedule.beta_end);
    s->read_enum("sigma_mode", [&](const std::string& v) {
      c.schedule.sigma_mode = parse_sigma_mode(v);
    });
    s->finish();
  }
  if (auto s = root.child("model")) {
    // The profile picks the defaults; explicit keys then override them.
    std::string profile = "tiny";
    s->read("profile", profile);
    try {
      c.model = parse_size_profile(profile) == SizeProfile::Tiny ? ModelConfig::tiny()
                                                                 : ModelConfig::full();
    } catch (const ConfigError& e) {
      s->fail("profile", e.what());
    }
    s->read("input_size", c.model.input_size);
    s->read("embed_dim", c.model.embed_dim);
    s->read("latent_stride", c.model.latent_stride);
    s->read("fpn_channels", c.model.fpn_channels);
    s->read("fusion_channels", c.model.fusion_channels);
    s->read("encoder_widths", c.model.encoder_widths);
    s->read("encoder_depths", c.model.encoder_depths);
    s->read("encoder_heads", c.model.encoder_heads);
    s->read("window_size", c.model.window_size);
    s->read_enum("decoder_attention", [&](const std::string& v) {
      c.model.decoder_attention = parse_attention(v);
    });
    s->read("decoder_layers", c.model.decoder_layers);
    s->read("decoder_heads", c.model.decoder_heads);
    s->read("deform_points", c.model.deform_points);
    s->read("time_dim", c.model.time_dim);
    s->read_enum("embed_norm", [&](const std::string& v) {
      c.model.embed_norm = parse_embed_norm(v);
    });
    s->read("image_mean", c.model.image_mean);
    s->read("image_std", c.model.image_std);
    s->finish();
  }
  if (auto s = root.child("loss")) {
    s->read("mu", c.loss.mu);
    s->read("eta", c.loss.eta);
    s->read("lambda", c.loss.lambda);
    s->read("smooth", c.loss.smooth);
    s->read("clip_eps", c.loss.clip_eps);
    s->finish();
  }
  if (auto s = root.child("train")) {
    s->read_enum("mode", [&](const std::string& v) { c.train.mode = parse_train_mode(v); });
    s->read("batch_size", c.train.batch_size);
    s->read("learning_rate", c.train.learning_rate);
    s->read("weight_decay", c.train.weight_decay);
    s->read("grad_clip", c.train.grad_clip);
    s->read("epochs", c.train.epochs);
    s->read("seed", c.train.seed);
    s->read("checkpoint_every", c.train.checkpoint_every);
    s->read("output_dir", c.train.output_dir);
    s->finish();
  }
  if (auto s = root.child("data")) {
    s->read("train_manifest", c.data.train_manifest);
    s->read("test_manifest", c.data.test_manifest);
    s->read("jpeg_aug", c.data.jpeg_aug);
    s->read("jpeg_aug_original", c.data.jpeg_aug_original);
    s->finish();
  }
  if (auto s = root.child("sampler")) {
    s->read("steps", c.sampler.steps);
    s->read("seed", c.sampler.seed);
    s->read("threshold", c.sampler.threshold);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  if (schedule.steps < 1) throw ConfigError("schedule.steps: must be >= 1");
  if (!(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end &&
        schedule.beta_end < 1.0)) {
    throw ConfigError("schedule.beta_start/beta_end: need 0 < start <= end < 1");
  }
  model.validate();
  loss.validate();
  if (train.batch_size < 1) throw ConfigError("train.batch_size: must be positive");
  if (!(train.learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate: must be positive");
  }
  if (train.weight_decay < 0.0) {
    throw ConfigError("train.weight_decay: must be non-negative");
  }
  if (train.grad_clip < 0.0) throw ConfigError("train.grad_clip: must be non-negative");
  if (train.epochs < 0) throw ConfigError("train.epochs: must be non-negative");
  if (train.checkpoint_every < 0) {
    throw ConfigError("train.checkpoint_every: must be non-negative");
  }
  if (sampler.steps < 1 || sampler.steps > schedule.steps) {
    throw ConfigError("sampler.steps: must lie in [1, schedule.steps]");
  }
  if (!(sampler.threshold > 0.0 && sampler.threshold < 1.0)) {
    throw ConfigError("sampler.threshold: must lie in (0, 1)");
  }
}

json ExperimentConfig::to_json() const {
  return json{
      {"schedule",
       {{"steps", schedule.steps},
        {"beta_start", schedule.beta_start},
        {"beta_end", schedule.beta_end},
        {"sigma_mode", schedule.sigma_mode == SigmaMode::Beta ? "beta" : "posterior"}}},
      {"model",
       {{"profile", std::string(to_string(model.profile))},
        {"input_size", model.input_size},
        {"embed_dim", model.embed_dim},
        {"latent_stride", model.latent_stride},
        {"fpn_channels", model.fpn_channels},
        {"fusion_channels", model.fusion_channels},
        {"encoder_widths", model.encoder_widths},
        {"encoder_depths", model.encoder_depths},
        {"encoder_heads", model.encoder_heads},
        {"window_size", model.window_size},
        {"decoder_attention",
         model.decoder_attention == DecoderAttention::Global ? "global" : "deformable"},
        {"decoder_layers", model.decoder_layers},
        {"decoder_heads", model.decoder_heads},
        {"deform_points", model.deform_points},
        {"time_dim", model.time_dim},
        {"embed_norm", model.embed_norm == EmbedNorm::PerChannel ? "per_channel" : "global"},
        {"image_mean", model.image_mean},
        {"image_std", model.image_std}}},
      {"loss",
       {{"mu", loss.mu},
        {"eta", loss.eta},
        {"lambda", loss.lambda},
        {"smooth", loss.smooth},
        {"clip_eps", loss.clip_eps}}},
      {"train",
       {{"mode", std::string(to_string(train.mode))},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"weight_decay", train.weight_decay},
        {"grad_clip", train.grad_clip},
        {"epochs", train.epochs},
        {"seed", train.seed},
        {"checkpoint_every", train.checkpoint_every},
        {"output_dir", train.output_dir}}},
      {"data",
       {{"train_manifest", data.train_manifest},
        {"test_manifest", data.test_manifest},
        {"jpeg_aug", data.jpeg_aug},
        {"jpeg_aug_original", data.jpeg_aug_original}}},
      {"sampler",
       {{"steps", sampler.steps},
        {"seed", sampler.seed},
        {"threshold", sampler.threshold}}},
  };
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path resolve_config_path(const std::string& name) {
  fs::path direct(name);
  if (fs::exists(direct) || direct.is_absolute()) return direct;
  if (const char* env = std::getenv("UGDIML_CONFIG_PATH")) {
    std::stringstream dirs(env);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
      if (dir.empty()) continue;
      auto candidate = fs::path(dir) / name;
      if (fs::exists(candidate)) return candidate;
    }
  }
  return direct;
}

}  // namespace ugdiml
