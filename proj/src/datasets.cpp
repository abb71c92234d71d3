#include "ugdiml/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ugdiml/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ugdiml {

namespace {

constexpr const char* kSchema = "ugdiml-manifest";

ManifestRecord parse_record(const json& j, std::size_t line) {
  auto fail = [&](const std::string& why) {
    throw ManifestError("manifest line " + std::to_string(line) + ": " + why, line);
  };
  if (!j.is_object()) fail("record is not an object");
  static const std::array<const char*, 6> known{"id", "forged", "original",
                                                "mask", "mode", "tag"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(),
                     [&](const char* k) { return key == k; }) == known.end()) {
      fail("unknown field '" + key + "'");
    }
  }
  auto str = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j.at(key).is_string()) {
      fail(std::string("missing string field '") + key + "'");
    }
    return j.at(key).get<std::string>();
  };
  ManifestRecord r;
  r.id = str("id");
  r.forged = str("forged");
  r.mask = str("mask");
  if (j.contains("original")) r.original = str("original");
  if (j.contains("tag")) r.tag = str("tag");
  try {
    r.mode = parse_task_mode(str("mode"));
  } catch (const ConfigError& e) {
    fail(e.what());
  }
  if (r.mode == TaskMode::CIML && !r.original) {
    fail("CIML record without an original image");
  }
  return r;
}

json record_to_json(const ManifestRecord& r) {
  json j{{"id", r.id},
         {"forged", r.forged},
         {"mask", r.mask},
         {"mode", std::string(to_string(r.mode))}};
  if (r.original) j["original"] = *r.original;
  if (r.tag) j["tag"] = *r.tag;
  return j;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open manifest " + path.string());
  }
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ManifestError("manifest line " + std::to_string(line) +
                              ": malformed JSON (" + e.what() + ")",
                          line);
    }
    if (!have_header) {
      if (!j.is_object() || j.value("schema", "") != kSchema) {
        throw ManifestError("manifest line " + std::to_string(line) +
                                ": missing ugdiml-manifest header",
                            line);
      }
      if (j.value("version", 0) != DatasetManifest::kVersion) {
        throw ManifestError("manifest line " + std::to_string(line) +
                                ": unsupported schema version",
                            line);
      }
      manifest.split = j.value("split", "train");
      have_header = true;
      continue;
    }
    auto record = parse_record(j, line);
    for (const auto* rel : {&record.forged, &record.mask}) {
      if (!fs::exists(manifest.resolve(*rel))) {
        throw ManifestError("manifest line " + std::to_string(line) +
                                ": missing file " + manifest.resolve(*rel).string(),
                            line);
      }
    }
    if (record.original && !fs::exists(manifest.resolve(*record.original))) {
      throw ManifestError("manifest line " + std::to_string(line) +
                              ": missing file " +
                              manifest.resolve(*record.original).string(),
                          line);
    }
    manifest.records.push_back(std::move(record));
  }
  if (!have_header) {
    throw ManifestError("manifest " + path.string() + " is empty", line);
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write manifest " + path.string());
  }
  out << json{{"schema", kSchema},
              {"version", DatasetManifest::kVersion},
              {"split", manifest.split}}
             .dump()
      << '\n';
  for (const auto& r : manifest.records) {
    out << record_to_json(r).dump() << '\n';
  }
}

std::vector<std::vector<std::size_t>> iterate(const DatasetManifest& manifest,
                                              std::size_t batch_size,
                                              uint64_t shuffle_seed) {
  if (batch_size == 0) {
    throw RangeError("batch size must be positive");
  }
  std::vector<std::size_t> order(manifest.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(shuffle_seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("cannot decode image " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw IoError("cannot decode mask " + path.string());
  }
  cv::Mat binary;
  cv::threshold(gray, binary, 127, 1, cv::THRESH_BINARY);
  return binary;
}

void write_rgb(const cv::Mat& rgb, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    throw IoError("cannot write image " + path.string());
  }
}

void write_mask(const cv::Mat& mask01, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat out = mask01 * 255;
  if (!cv::imwrite(path.string(), out)) {
    throw IoError("cannot write mask " + path.string());
  }
}

RawSample load_raw(const DatasetManifest& manifest, std::size_t index) {
  const auto& r = manifest.records.at(index);
  RawSample s;
  s.forged = read_rgb(manifest.resolve(r.forged));
  if (r.original) s.original = read_rgb(manifest.resolve(*r.original));
  s.mask = read_mask(manifest.resolve(r.mask));
  s.mode = r.mode;
  s.source_id = r.id;
  if (s.mask.size() != s.forged.size()) {
    throw ShapeError("mask and forged image sizes differ for " + r.id);
  }
  if (s.original && s.original->size() != s.forged.size()) {
    throw ShapeError("original and forged image sizes differ for " + r.id);
  }
  return s;
}

cv::Mat jpeg_roundtrip(const cv::Mat& rgb, int quality) {
  std::vector<uchar> buffer;
  if (!cv::imencode(".jpg", rgb, buffer, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw IoError("JPEG encoding failed");
  }
  return cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
}

torch::Tensor to_tensor(const cv::Mat& rgb, const ImageNormalization& norm) {
  if (rgb.type() != CV_8UC3) {
    throw ShapeError("expected an 8-bit 3-channel image");
  }
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto t = torch::from_blob(contiguous.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .div(255.0);
  auto mean = torch::tensor(std::vector<double>(norm.mean.begin(), norm.mean.end()))
                  .to(torch::kFloat32)
                  .view({3, 1, 1});
  auto stdv = torch::tensor(std::vector<double>(norm.std.begin(), norm.std.end()))
                  .to(torch::kFloat32)
                  .view({3, 1, 1});
  return ((t - mean) / stdv).contiguous();
}

BinaryMask to_mask(const cv::Mat& mask01) {
  cv::Mat contiguous = mask01.isContinuous() ? mask01 : mask01.clone();
  return BinaryMask(
      torch::from_blob(contiguous.data, {mask01.rows, mask01.cols}, torch::kUInt8)
          .clone());
}

ForgerySample preprocess(const RawSample& sample, int size, bool jpeg_aug,
                         std::mt19937_64& rng, const ImageNormalization& norm,
                         bool jpeg_aug_original) {
  if (size <= 0) {
    throw RangeError("preprocess size must be positive");
  }
  std::uniform_int_distribution<int> quality(30, 100);
  auto prepare = [&](const cv::Mat& img, bool aug) {
    cv::Mat out = img;
    if (img.rows != size || img.cols != size) {
      cv::resize(img, out, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    }
    if (aug) out = jpeg_roundtrip(out, quality(rng));
    return out;
  };
  cv::Mat mask = sample.mask;
  if (mask.rows != size || mask.cols != size) {
    cv::resize(sample.mask, mask, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  }
  ForgerySample out{InputImage{to_tensor(prepare(sample.forged, jpeg_aug), norm), ImageRole::Forged},
                    std::nullopt, to_mask(mask), sample.mode, sample.source_id};
  if (sample.original) {
    out.original = InputImage{to_tensor(prepare(*sample.original, jpeg_aug && jpeg_aug_original), norm),
                              ImageRole::Original};
  }
  return out;
}

Batch collate(std::span<const ForgerySample> samples, TaskMode mode) {
  if (samples.empty()) {
    throw RangeError("cannot collate an empty batch");
  }
  std::vector<torch::Tensor> forged, original, masks;
  Batch batch;
  batch.mode = mode;
  for (const auto& s : samples) {
    forged.push_back(s.forged.pixels);
    masks.push_back(s.gt_mask.grid());
    batch.ids.push_back(s.source_id);
    if (mode == TaskMode::CIML) {
      if (!s.original) {
        throw ModeError("CIML batch contains sample '" + s.source_id +
                        "' without an original image");
      }
      original.push_back(s.original->pixels);
    }
  }
  batch.forged = torch::stack(forged);
  batch.masks = torch::stack(masks);
  if (mode == TaskMode::CIML) batch.original = torch::stack(original);
  return batch;
}

std::vector<cv::Mat> make_base_images(std::mt19937_64& rng, int count, int size) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<cv::Mat> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    std::array<double, 3> c0{}, c1{}, phase{};
    for (int c = 0; c < 3; ++c) {
      c0[c] = 40.0 + 170.0 * unit(rng);
      c1[c] = 40.0 + 170.0 * unit(rng);
      phase[c] = 2.0 * std::numbers::pi * unit(rng);
    }
    const double grad_angle = 2.0 * std::numbers::pi * unit(rng);
    const double stripe_angle = std::numbers::pi * unit(rng);
    const double freq = 0.25 + 0.9 * unit(rng);
    const double amplitude = 15.0 + 35.0 * unit(rng);
    const double noise_sigma = 2.0 + 14.0 * unit(rng);
    std::normal_distribution<double> noise(0.0, noise_sigma);

    cv::Mat img(size, size, CV_8UC3);
    const double gx = std::cos(grad_angle), gy = std::sin(grad_angle);
    const double sx = std::cos(stripe_angle), sy = std::sin(stripe_angle);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double u = (x - size / 2.0) / size, v = (y - size / 2.0) / size;
        const double g = std::clamp(0.5 + gx * u + gy * v, 0.0, 1.0);
        const double s = freq * (x * sx + y * sy);
        auto& px = img.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) {
          const double value = c0[c] + g * (c1[c] - c0[c]) +
                               amplitude * std::sin(s + phase[c]) + noise(rng);
          px[c] = cv::saturate_cast<uchar>(value);
        }
      }
    }
    out.push_back(img);
  }
  return out;
}

cv::Mat random_region(std::mt19937_64& rng, int size, double min_area,
                      double max_area) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double total = static_cast<double>(size) * size;
  for (;;) {
    const double target = min_area + (max_area - min_area) * unit(rng);
    cv::Mat mask = cv::Mat::zeros(size, size, CV_8U);
    const double cx = size * (0.25 + 0.5 * unit(rng));
    const double cy = size * (0.25 + 0.5 * unit(rng));
    const double angle = 180.0 * unit(rng);
    const double aspect = 0.5 + unit(rng);  // axis ratio in [0.5, 1.5]
    if (unit(rng) < 0.5) {
      // Ellipse of area pi a b = target * total.
      const double ab = target * total / std::numbers::pi;
      const double a = std::sqrt(ab * aspect), b = std::sqrt(ab / aspect);
      cv::ellipse(mask,
                  cv::RotatedRect(cv::Point2f(static_cast<float>(cx), static_cast<float>(cy)),
                                  cv::Size2f(static_cast<float>(2 * a), static_cast<float>(2 * b)),
                                  static_cast<float>(angle)),
                  cv::Scalar(1), cv::FILLED);
    } else {
      // Star-shaped polygon whose mean radius matches the target area.
      const int vertices = 5 + static_cast<int>(unit(rng) * 4);
      const double radius = std::sqrt(target * total / std::numbers::pi);
      std::vector<cv::Point> pts;
      for (int i = 0; i < vertices; ++i) {
        const double theta = 2.0 * std::numbers::pi * (i + 0.3 * unit(rng)) / vertices;
        const double r = radius * (0.8 + 0.4 * unit(rng));
        pts.emplace_back(static_cast<int>(std::lround(cx + r * aspect * std::cos(theta))),
                         static_cast<int>(std::lround(cy + r / aspect * std::sin(theta))));
      }
      cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(1));
    }
    const double frac = cv::countNonZero(mask) / total;
    if (frac >= min_area && frac <= max_area) return mask;
  }
}

DatasetManifest synth_forgery(std::span<const cv::Mat> base_images,
                              std::mt19937_64& rng, int n,
                              const fs::path& out_dir, const std::string& split,
                              TaskMode mode) {
  if (base_images.size() < 2) {
    throw RangeError("synthetic splicing needs at least two base images");
  }
  if (n < 0) {
    throw RangeError("sample count must be non-negative");
  }
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.split = split;
  std::uniform_int_distribution<std::size_t> pick(0, base_images.size() - 1);
  for (int i = 0; i < n; ++i) {
    const std::size_t host = pick(rng);
    std::size_t donor = pick(rng);
    while (donor == host) donor = pick(rng);
    const cv::Mat& h = base_images[host];
    const cv::Mat& d = base_images[donor];
    if (h.size() != d.size() || h.rows != h.cols) {
      throw ShapeError("base images must be square and equally sized");
    }
    cv::Mat region = random_region(rng, h.rows);
    cv::Mat forged = h.clone();
    d.copyTo(forged, region);

    char name[32];
    std::snprintf(name, sizeof(name), "%s_%05d", split.c_str(), i);
    ManifestRecord r;
    r.id = name;
    r.forged = std::string("forged/") + name + ".png";
    r.original = std::string("original/") + name + ".png";
    r.mask = std::string("mask/") + name + ".png";
    r.mode = mode;
    r.tag = "SPG";
    write_rgb(forged, out_dir / r.forged);
    write_rgb(h, out_dir / *r.original);
    write_mask(region, out_dir / r.mask);
    manifest.records.push_back(std::move(r));
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

RawSampleCache::RawSampleCache(const DatasetManifest& manifest) {
  samples_.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    samples_.push_back(load_raw(manifest, i));
  }
}

}  // namespace ugdiml
