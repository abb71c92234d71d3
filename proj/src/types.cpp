#include "ugdiml/types.hpp"

#include <string>

#include "ugdiml/errors.hpp"

namespace ugdiml {

std::string_view to_string(TaskMode mode) {
  return mode == TaskMode::IML ? "IML" : "CIML";
}

std::string_view to_string(SizeProfile profile) {
  return profile == SizeProfile::Tiny ? "tiny" : "full";
}

TaskMode parse_task_mode(std::string_view text) {
  if (text == "IML" || text == "iml") return TaskMode::IML;
  if (text == "CIML" || text == "ciml") return TaskMode::CIML;
  throw ConfigError("unknown task mode '" + std::string(text) + "'");
}

SizeProfile parse_size_profile(std::string_view text) {
  if (text == "tiny") return SizeProfile::Tiny;
  if (text == "full") return SizeProfile::Full;
  throw ConfigError("unknown size profile '" + std::string(text) + "'");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.profile = SizeProfile::Full;
  c.input_size = 512;
  c.fpn_channels = 256;
  c.fusion_channels = 128;
  c.encoder_widths = {128, 256, 512, 1024};
  c.encoder_depths = {2, 2, 18, 2};
  c.encoder_heads = {4, 8, 16, 32};
  c.window_size = 7;
  c.decoder_attention = DecoderAttention::Deformable;
  c.decoder_layers = 6;
  c.decoder_heads = 8;
  c.deform_points = 4;
  c.time_dim = 128;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("model." + key + ": " + why);
  };
  if (input_size <= 0 || input_size % 32 != 0) {
    fail("input_size", "must be a positive multiple of 32");
  }
  if (latent_stride != 4) {
    fail("latent_stride", "diffusion runs on the stride-4 FPN grid");
  }
  if (embed_dim < 1) fail("embed_dim", "must be positive");
  if (fpn_channels < 1) fail("fpn_channels", "must be positive");
  if (fusion_channels < 1) fail("fusion_channels", "must be positive");
  if (encoder_widths.size() != 4) fail("encoder_widths", "needs 4 entries");
  for (auto w : encoder_widths) {
    if (w < 1) fail("encoder_widths", "entries must be positive");
  }
  if (profile == SizeProfile::Full) {
    if (encoder_depths.size() != 4) fail("encoder_depths", "needs 4 entries");
    if (encoder_heads.size() != 4) fail("encoder_heads", "needs 4 entries");
    for (std::size_t i = 0; i < 4; ++i) {
      if (encoder_widths[i] != encoder_widths[0] << i) {
        fail("encoder_widths", "swin stages double their width");
      }
      if (encoder_depths[i] < 1 || encoder_heads[i] < 1 ||
          encoder_widths[i] % encoder_heads[i] != 0) {
        fail("encoder_heads", "each stage width must divide by its heads");
      }
    }
    if (window_size < 1) fail("window_size", "must be positive");
  }
  if (decoder_layers < 1) fail("decoder_layers", "must be positive");
  if (decoder_heads < 1 || (2 * fusion_channels) % decoder_heads != 0) {
    fail("decoder_heads", "must divide the decoder width 2*fusion_channels");
  }
  if (deform_points < 1) fail("deform_points", "must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) fail("time_dim", "must be even");
  for (double s : image_std) {
    if (!(s > 0.0)) fail("image_std", "must be positive");
  }
}

}  // namespace ugdiml
