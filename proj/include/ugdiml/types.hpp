#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ugdiml/mask_codec.hpp"

namespace ugdiml {

/// IML: forged image only. CIML: forged image plus its pristine original.
enum class TaskMode { IML, CIML };

enum class SizeProfile { Tiny, Full };

enum class DecoderAttention { Global, Deformable };

std::string_view to_string(TaskMode mode);
std::string_view to_string(SizeProfile profile);
TaskMode parse_task_mode(std::string_view text);
SizeProfile parse_size_profile(std::string_view text);

/// Architecture hyper-parameters. `tiny()` is the desk-scale profile, `full()`
/// the Swin-B encoder with a six-layer deformable-attention decoder.
struct ModelConfig {
  SizeProfile profile = SizeProfile::Tiny;
  int64_t input_size = 64;
  int64_t embed_dim = 16;
  int64_t latent_stride = 4;
  int64_t fpn_channels = 64;
  int64_t fusion_channels = 32;
  std::vector<int64_t> encoder_widths{32, 64, 96, 128};
  std::vector<int64_t> encoder_depths{1, 1, 1, 1};
  std::vector<int64_t> encoder_heads{2, 4, 6, 8};
  int64_t window_size = 7;
  DecoderAttention decoder_attention = DecoderAttention::Global;
  int64_t decoder_layers = 2;
  int64_t decoder_heads = 4;
  int64_t deform_points = 4;
  int64_t time_dim = 64;
  EmbedNorm embed_norm = EmbedNorm::PerChannel;
  std::array<double, 3> image_mean{0.485, 0.456, 0.406};
  std::array<double, 3> image_std{0.229, 0.224, 0.225};

  static ModelConfig tiny();
  static ModelConfig full();

  int64_t latent_size() const { return input_size / latent_stride; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

}  // namespace ugdiml
