#include "ugdiml/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ugdiml/errors.hpp"

namespace ugdiml {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) {
    throw ShapeError("prediction has " + std::to_string(a) +
                     " pixels, ground truth " + std::to_string(b));
  }
}

}  // namespace

ConfusionCounts confusion(std::span<const float> pred,
                          std::span<const uint8_t> gt, double threshold) {
  check_sizes(pred.size(), gt.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double pixel_f1(std::span<const float> pred, std::span<const uint8_t> gt,
                double threshold) {
  const auto c = confusion(pred, gt, threshold);
  const int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double pixel_iou(std::span<const float> pred, std::span<const uint8_t> gt,
                 double threshold) {
  const auto c = confusion(pred, gt, threshold);
  const int64_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double pixel_auc(std::span<const float> pred, std::span<const uint8_t> gt) {
  check_sizes(pred.size(), gt.size());
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });

  // Mann-Whitney U with average ranks across ties.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pred[order[j]] == pred[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (gt[order[k]] != 0) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw RangeError("AUC is undefined for single-class ground truth");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

MetricSummary aggregate(std::span<const ImageScores> scores) {
  if (scores.empty()) {
    throw RangeError("cannot aggregate an empty score list");
  }
  MetricSummary s;
  s.dataset = scores.front().dataset;
  s.images = scores.size();
  double auc_sum = 0.0;
  for (const auto& img : scores) {
    s.mean_f1 += img.f1;
    s.mean_iou += img.iou;
    if (img.auc) {
      auc_sum += *img.auc;
      ++s.auc_images;
    }
  }
  s.mean_f1 /= static_cast<double>(s.images);
  s.mean_iou /= static_cast<double>(s.images);
  if (s.auc_images > 0) s.mean_auc = auc_sum / static_cast<double>(s.auc_images);
  s.per_image.assign(scores.begin(), scores.end());
  return s;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string format_report(const MetricSummary& summary) {
  std::ostringstream out;
  out << "# dataset=" << summary.dataset << " images=" << summary.images
      << " averaging=per-image threshold>=0.5\n";
  out << "image_id\tF1\tIOU\tAUC\n";
  for (const auto& img : summary.per_image) {
    out << img.image_id << '\t' << fixed(img.f1) << '\t' << fixed(img.iou) << '\t'
        << (img.auc ? fixed(*img.auc) : std::string("n/a")) << '\n';
  }
  out << "mean\t" << fixed(summary.mean_f1) << '\t' << fixed(summary.mean_iou)
      << '\t' << (summary.mean_auc ? fixed(*summary.mean_auc) : std::string("n/a"))
      << '\n';
  return out.str();
}

std::string report_records(const MetricSummary& summary) {
  std::ostringstream out;
  auto emit = [&](const char* metric, const std::string& id, double value) {
    nlohmann::json rec{{"metric", metric},
                       {"dataset", summary.dataset},
                       {"image_id", id},
                       {"value", value}};
    out << rec.dump() << '\n';
  };
  for (const auto& img : summary.per_image) {
    emit("f1", img.image_id, img.f1);
    emit("iou", img.image_id, img.iou);
    if (img.auc) emit("auc", img.image_id, *img.auc);
  }
  emit("f1", "__mean__", summary.mean_f1);
  emit("iou", "__mean__", summary.mean_iou);
  if (summary.mean_auc) emit("auc", "__mean__", *summary.mean_auc);
  return out.str();
}

}  // namespace ugdiml
