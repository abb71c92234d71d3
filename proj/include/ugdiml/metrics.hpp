#pragma once

// Pixel-level localization metrics. Predictions are manipulation
// probabilities, ground truth is 0/1; both flattened in the same order.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ugdiml {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;

  int64_t total() const { return tp + fp + fn + tn; }
};

/// Pixel labelled positive iff pred >= threshold.
ConfusionCounts confusion(std::span<const float> pred,
                          std::span<const uint8_t> gt, double threshold);

/// 2tp / (2tp + fp + fn); 0 when the denominator vanishes.
double pixel_f1(std::span<const float> pred, std::span<const uint8_t> gt,
                double threshold = 0.5);

/// tp / (tp + fp + fn); 0 on an empty union.
double pixel_iou(std::span<const float> pred, std::span<const uint8_t> gt,
                 double threshold = 0.5);

/// P(score(pos) > score(neg)) with ties counted 1/2. Throws RangeError when
/// the ground truth holds a single class.
double pixel_auc(std::span<const float> pred, std::span<const uint8_t> gt);

struct ImageScores {
  std::string dataset;
  std::string image_id;
  double f1 = 0.0;
  double iou = 0.0;
  std::optional<double> auc;  ///< absent when the ground truth is single-class
};

struct MetricSummary {
  std::string dataset;
  std::size_t images = 0;
  double mean_f1 = 0.0;
  double mean_iou = 0.0;
  std::optional<double> mean_auc;
  std::size_t auc_images = 0;
  std::vector<ImageScores> per_image;
};

/// Per-image arithmetic means. Throws RangeError on empty input.
MetricSummary aggregate(std::span<const ImageScores> scores);

/// Human-readable table: header line, column line, one row per image, mean row.
std::string format_report(const MetricSummary& summary);

/// One JSON object per line: {"metric", "dataset", "image_id", "value"}.
/// Means use image_id "__mean__".
std::string report_records(const MetricSummary& summary);

}  // namespace ugdiml
