#pragma once

// Dataset ingestion: manifests, decoding, preprocessing / augmentation,
// batching, and a synthetic splice generator with exact ground truth.
//
// On disk, images are 8-bit RGB files and masks single-channel {0, 255}
// files (255 = manipulated). A manifest is a JSON-lines file: a header line
//   {"schema": "ugdiml-manifest", "version": 1, "split": "train"}
// followed by one record per line:
//   {"id": "...", "forged": "rel.png", "original": "rel.png", "mask": "rel.png",
//    "mode": "CIML", "tag": "SPG"}
// Paths are relative to the manifest's directory; "original" and "tag" are
// optional.

#include <torch/torch.h>

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ugdiml/mask_codec.hpp"
#include "ugdiml/types.hpp"

namespace ugdiml {

enum class ImageRole { Forged, Original };

/// [3, H, W] float tensor standardized with the configured mean / std.
struct InputImage {
  torch::Tensor pixels;
  ImageRole role = ImageRole::Forged;
};

struct ForgerySample {
  InputImage forged;
  std::optional<InputImage> original;
  BinaryMask gt_mask;
  TaskMode mode = TaskMode::IML;
  std::string source_id;
};

/// Decoded but not yet preprocessed sample: RGB CV_8UC3 images and a CV_8U
/// 0/1 mask.
struct RawSample {
  cv::Mat forged;
  std::optional<cv::Mat> original;
  cv::Mat mask;
  TaskMode mode = TaskMode::IML;
  std::string source_id;
};

struct ImageNormalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct ManifestRecord {
  std::string id;
  std::string forged;
  std::optional<std::string> original;
  std::string mask;
  TaskMode mode = TaskMode::IML;
  std::optional<std::string> tag;  ///< e.g. SDG / SPG pair taxonomy

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::filesystem::path root;
  std::string split = "train";
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  std::filesystem::path resolve(const std::string& relative) const {
    return root / relative;
  }
};

/// Parses and validates a manifest. Throws ManifestError (with the 1-based
/// line number) for malformed records or missing files.
DatasetManifest load_manifest(const std::filesystem::path& path);

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

/// Batches of record indices. Order is a deterministic function of
/// `shuffle_seed`; the last batch may be short.
std::vector<std::vector<std::size_t>> iterate(const DatasetManifest& manifest,
                                              std::size_t batch_size,
                                              uint64_t shuffle_seed);

cv::Mat read_rgb(const std::filesystem::path& path);
/// Reads a single-channel mask and binarizes it (> 127 -> 1).
cv::Mat read_mask(const std::filesystem::path& path);
void write_rgb(const cv::Mat& rgb, const std::filesystem::path& path);
/// Writes a 0/1 mask as {0, 255}.
void write_mask(const cv::Mat& mask01, const std::filesystem::path& path);

RawSample load_raw(const DatasetManifest& manifest, std::size_t index);

/// Encodes and decodes as JPEG at `quality` (1..100).
cv::Mat jpeg_roundtrip(const cv::Mat& rgb, int quality);

torch::Tensor to_tensor(const cv::Mat& rgb, const ImageNormalization& norm);
BinaryMask to_mask(const cv::Mat& mask01);

/// Resizes images (bilinear) and the mask (nearest) to size x size and,
/// when `jpeg_aug` is set, re-encodes each image at a quality drawn
/// uniformly from [30, 100].
ForgerySample preprocess(const RawSample& sample, int size, bool jpeg_aug,
                         std::mt19937_64& rng,
                         const ImageNormalization& norm = {},
                         bool jpeg_aug_original = true);

/// Stacked tensors for one training / evaluation step.
struct Batch {
  torch::Tensor forged;                   ///< [B, 3, H, W]
  std::optional<torch::Tensor> original;  ///< CIML only
  torch::Tensor masks;                    ///< [B, H, W] uint8
  TaskMode mode = TaskMode::IML;
  std::vector<std::string> ids;
};

/// IML drops originals; CIML requires every sample to carry one (ModeError).
Batch collate(std::span<const ForgerySample> samples, TaskMode mode);

/// Procedural textured RGB images (gradient + oriented stripes + noise), each
/// with its own random texture statistics.
std::vector<cv::Mat> make_base_images(std::mt19937_64& rng, int count, int size);

/// Random elliptical or polygonal region covering [min_area, max_area] of a
/// size x size grid; CV_8U 0/1.
cv::Mat random_region(std::mt19937_64& rng, int size, double min_area = 0.02,
                      double max_area = 0.40);

/// Splices a random region from a donor base into a host base `n` times and
/// writes forged / original / mask PNGs plus `manifest.jsonl` into `out_dir`.
/// The original is the host, so records are tagged SPG. Throws RangeError
/// with fewer than two bases.
DatasetManifest synth_forgery(std::span<const cv::Mat> base_images,
                              std::mt19937_64& rng, int n,
                              const std::filesystem::path& out_dir,
                              const std::string& split = "train",
                              TaskMode mode = TaskMode::CIML);

/// Decodes every record once and keeps the raw pixels in memory.
class RawSampleCache {
 public:
  explicit RawSampleCache(const DatasetManifest& manifest);
  const RawSample& operator[](std::size_t i) const { return samples_.at(i); }
  std::size_t size() const { return samples_.size(); }

 private:
  std::vector<RawSample> samples_;
};

}  // namespace ugdiml
