#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "icps/data.hpp"
#include "icps/network.hpp"

namespace icps {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Binarizes `pred` with pred >= threshold and counts against binary `gt`.
template <typename Scalar>
ConfusionCounts confusion(std::span<const Scalar> pred, std::span<const Scalar> gt, double threshold = 0.5);

// Empty ground truth (tp + fn == 0): fnr = 0; dice = iou = 1 if fp == 0 else 0.
double dice(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double fnr(const ConfusionCounts& c);

template <typename Scalar>
double mae(std::span<const Scalar> pred, std::span<const Scalar> gt);

struct ImageMetrics {
  std::string id;
  ConfusionCounts counts;
  double dice = 0.0;
  double iou = 0.0;
  double mae = 0.0;
  double fnr = 0.0;
};

template <typename Scalar>
ImageMetrics image_metrics(std::span<const Scalar> pred, std::span<const Scalar> gt, double threshold,
                           std::string id = {});

struct MetricRow {
  std::string dataset;
  std::string model;
  double mdice = 0.0;
  double miou = 0.0;
  double mae = 0.0;
  double fnr = 0.0;
  std::size_t images = 0;
};

/// Arithmetic per-image means in input order.
MetricRow aggregate(const std::vector<ImageMetrics>& images, std::string dataset, std::string model);

struct ProfileResult {
  std::int64_t param_count = 0;
  std::int64_t mac_count = 0;
  double fps = 0.0;
  Index input_size = 0;
  int timed_runs = 0;
  std::string hardware;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::optional<ProfileResult> profile;
  double threshold = 0.5;

  nlohmann::json to_json() const;
  /// Aligned columns, four decimals.
  std::string to_csv() const;
  void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

// ---------------------------------------------------------------- integrity

/// 8-connected component labels (0 = background, 1..count).
std::vector<int> label_components(std::span<const std::uint8_t> mask, int width, int height, int& count);

struct IntegrityImage {
  std::string id;
  int gt_components = 0;
  int macro_misses = 0;        // GT components with no predicted pixel
  double micro_deficit = 0.0;  // mean over detected components of 1 - covered / area
  double fnr = 0.0;
};

IntegrityImage integrity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int width, int height,
                         std::string id = {});

struct IntegrityRow {
  std::string dataset;
  std::string model;
  std::size_t images = 0;
  int gt_components = 0;
  int macro_misses = 0;
  double macro_miss_rate = 0.0;  // macro_misses / gt_components
  double micro_deficit = 0.0;    // mean over images that have a detected component
  double fnr = 0.0;              // mean per-image FNR
};

IntegrityRow aggregate_integrity(const std::vector<IntegrityImage>& images, std::string dataset, std::string model);
std::string integrity_csv(const std::vector<IntegrityRow>& rows);

// ---------------------------------------------------------------- evaluation

struct Evaluation {
  MetricRow row;
  IntegrityRow integrity;
  std::vector<ImageMetrics> per_image;
};

/// Runs the model in eval mode over `data` and scores the final output (p1, else p2).
Evaluation evaluate(Model<float>& model, const Dataset& data, double threshold, const std::string& dataset_name,
                    const std::string& model_name, std::size_t batch_size = 4);

/// Scores already-binarized predictions (values {0,1}) and probability maps against `data`.
Evaluation evaluate_maps(const std::vector<std::vector<float>>& probabilities, const Dataset& data, double threshold,
                         const std::string& dataset_name, const std::string& model_name);

std::string format_fixed(double value, int decimals = 4);

}  // namespace icps
