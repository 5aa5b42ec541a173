#include "icps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace icps {

template <typename Scalar>
ConfusionCounts confusion(std::span<const Scalar> pred, std::span<const Scalar> gt, double threshold) {
  require(pred.size() == gt.size(), "confusion: prediction and ground truth sizes differ");
  require(threshold > 0.0 && threshold < 1.0, "confusion: threshold must be in (0, 1)");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Scalar g = gt[i];
    if (g != Scalar(0) && g != Scalar(1)) throw ContractViolation("confusion: ground truth must be binary");
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool t = g == Scalar(1);
    if (p && t)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double dice(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

double iou(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

double fnr(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return 0.0;
  return static_cast<double>(c.fn) / static_cast<double>(c.tp + c.fn);
}

template <typename Scalar>
double mae(std::span<const Scalar> pred, std::span<const Scalar> gt) {
  require(pred.size() == gt.size() && !pred.empty(), "mae: sizes must match and be non-zero");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
  return sum / static_cast<double>(pred.size());
}

template <typename Scalar>
ImageMetrics image_metrics(std::span<const Scalar> pred, std::span<const Scalar> gt, double threshold, std::string id) {
  ImageMetrics m;
  m.id = std::move(id);
  m.counts = confusion(pred, gt, threshold);
  m.dice = dice(m.counts);
  m.iou = iou(m.counts);
  m.fnr = fnr(m.counts);
  m.mae = mae(pred, gt);
  return m;
}

MetricRow aggregate(const std::vector<ImageMetrics>& images, std::string dataset, std::string model) {
  require(!images.empty(), "aggregate: no images");
  MetricRow row{std::move(dataset), std::move(model), 0, 0, 0, 0, images.size()};
  for (const auto& m : images) {
    row.mdice += m.dice;
    row.miou += m.iou;
    row.mae += m.mae;
    row.fnr += m.fnr;
  }
  const double n = static_cast<double>(images.size());
  row.mdice /= n;
  row.miou /= n;
  row.mae /= n;
  row.fnr /= n;
  return row;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["threshold"] = threshold;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"dataset", r.dataset},
                         {"model", r.model},
                         {"images", r.images},
                         {"mDice", std::stod(format_fixed(r.mdice))},
                         {"mIoU", std::stod(format_fixed(r.miou))},
                         {"MAE", std::stod(format_fixed(r.mae))},
                         {"FNR", std::stod(format_fixed(r.fnr))}});
  }
  if (profile) {
    j["profile"] = {{"params", profile->param_count},
                    {"params_M", std::stod(format_fixed(profile->param_count / 1e6))},
                    {"macs", profile->mac_count},
                    {"macs_G", std::stod(format_fixed(profile->mac_count / 1e9))},
                    {"fps", std::stod(format_fixed(profile->fps))},
                    {"input_size", profile->input_size},
                    {"timed_runs", profile->timed_runs},
                    {"hardware", profile->hardware}};
  }
  return j;
}

namespace {

std::string aligned_table(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << row[i];
      if (i + 1 < row.size()) os << "," << std::string(width[i] - row[i].size() + 1, ' ');
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::vector<std::vector<std::string>> cells{{"dataset", "model", "images", "mDice", "mIoU", "MAE", "FNR"}};
  for (const auto& r : rows)
    cells.push_back({r.dataset, r.model, std::to_string(r.images), format_fixed(r.mdice), format_fixed(r.miou),
                     format_fixed(r.mae), format_fixed(r.fnr)});
  return aligned_table(cells);
}

void EvalReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot write '" + json_path.string() + "'");
  js << to_json().dump(2) << "\n";
  std::ofstream cs(csv_path);
  if (!cs) throw IoError("cannot write '" + csv_path.string() + "'");
  cs << to_csv();
}

// ---------------------------------------------------------------- integrity

std::vector<int> label_components(std::span<const std::uint8_t> mask, int width, int height, int& count) {
  require(mask.size() == static_cast<std::size_t>(width) * height, "label_components: size mismatch");
  std::vector<int> labels(mask.size(), 0);
  count = 0;
  std::vector<int> stack;
  for (int start = 0; start < width * height; ++start) {
    if (!mask[start] || labels[start]) continue;
    ++count;
    labels[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int y = idx / width, x = idx % width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
          const int n = ny * width + nx;
          if (mask[n] && !labels[n]) {
            labels[n] = count;
            stack.push_back(n);
          }
        }
    }
  }
  return labels;
}

IntegrityImage integrity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int width, int height,
                         std::string id) {
  require(pred.size() == gt.size(), "integrity: prediction and ground truth sizes differ");
  IntegrityImage out;
  out.id = std::move(id);
  int count = 0;
  const std::vector<int> labels = label_components(gt, width, height, count);
  out.gt_components = count;
  std::vector<std::int64_t> area(static_cast<std::size_t>(count) + 1, 0), covered(static_cast<std::size_t>(count) + 1, 0);
  std::int64_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!labels[i]) continue;
    ++area[static_cast<std::size_t>(labels[i])];
    if (pred[i]) {
      ++covered[static_cast<std::size_t>(labels[i])];
      ++tp;
    } else {
      ++fn;
    }
  }
  int detected = 0;
  double deficit = 0.0;
  for (int c = 1; c <= count; ++c) {
    if (covered[static_cast<std::size_t>(c)] == 0) {
      ++out.macro_misses;
    } else {
      ++detected;
      deficit += 1.0 - static_cast<double>(covered[static_cast<std::size_t>(c)]) / static_cast<double>(area[static_cast<std::size_t>(c)]);
    }
  }
  out.micro_deficit = detected ? deficit / detected : 0.0;
  out.fnr = (tp + fn) ? static_cast<double>(fn) / static_cast<double>(tp + fn) : 0.0;
  return out;
}

IntegrityRow aggregate_integrity(const std::vector<IntegrityImage>& images, std::string dataset, std::string model) {
  IntegrityRow row;
  row.dataset = std::move(dataset);
  row.model = std::move(model);
  row.images = images.size();
  int with_detection = 0;
  for (const auto& im : images) {
    row.gt_components += im.gt_components;
    row.macro_misses += im.macro_misses;
    row.fnr += im.fnr;
    if (im.gt_components > im.macro_misses) {
      row.micro_deficit += im.micro_deficit;
      ++with_detection;
    }
  }
  if (!images.empty()) row.fnr /= static_cast<double>(images.size());
  if (with_detection) row.micro_deficit /= with_detection;
  if (row.gt_components) row.macro_miss_rate = static_cast<double>(row.macro_misses) / row.gt_components;
  return row;
}

std::string integrity_csv(const std::vector<IntegrityRow>& rows) {
  std::vector<std::vector<std::string>> cells{
      {"dataset", "model", "images", "gt_components", "macro_misses", "macro_miss_rate", "micro_deficit", "FNR"}};
  for (const auto& r : rows)
    cells.push_back({r.dataset, r.model, std::to_string(r.images), std::to_string(r.gt_components),
                     std::to_string(r.macro_misses), format_fixed(r.macro_miss_rate), format_fixed(r.micro_deficit),
                     format_fixed(r.fnr)});
  return aligned_table(cells);
}

// ---------------------------------------------------------------- evaluation

namespace {

Evaluation score(const std::vector<std::vector<float>>& probs, const Dataset& data, double threshold,
                 const std::string& dataset_name, const std::string& model_name) {
  Evaluation ev;
  std::vector<IntegrityImage> integ;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const std::span<const float> gt(s.mask.data(), static_cast<std::size_t>(s.mask.size()));
    if (probs[i].size() != gt.size())
      throw ContractViolation("evaluate: prediction for '" + s.id + "' has " + std::to_string(probs[i].size()) +
                              " pixels, mask has " + std::to_string(gt.size()));
    ev.per_image.push_back(image_metrics(std::span<const float>(probs[i]), gt, threshold, s.id));
    std::vector<std::uint8_t> pb(gt.size()), gb(gt.size());
    for (std::size_t k = 0; k < gt.size(); ++k) {
      pb[k] = probs[i][k] >= threshold ? 1 : 0;
      gb[k] = gt[k] != 0.0f ? 1 : 0;
    }
    integ.push_back(integrity(pb, gb, static_cast<int>(s.mask.w()), static_cast<int>(s.mask.h()), s.id));
  }
  ev.row = aggregate(ev.per_image, dataset_name, model_name);
  ev.integrity = aggregate_integrity(integ, dataset_name, model_name);
  return ev;
}

}  // namespace

Evaluation evaluate(Model<float>& model, const Dataset& data, double threshold, const std::string& dataset_name,
                    const std::string& model_name, std::size_t batch_size) {
  require(!data.empty(), "evaluate: dataset is empty");
  model.set_training(false);
  std::vector<std::vector<float>> probs;
  for (const SampleBatch& b : data.batches(batch_size)) {
    const PredictionSet<float> preds = model.forward(b.images);
    const Tensor<float>& out = preds.final_output().prob;
    for (Index n = 0; n < out.n(); ++n) {
      const auto flat = out.flat_sample(n);
      probs.emplace_back(flat.data(), flat.data() + flat.size());
    }
  }
  return score(probs, data, threshold, dataset_name, model_name);
}

Evaluation evaluate_maps(const std::vector<std::vector<float>>& probabilities, const Dataset& data, double threshold,
                         const std::string& dataset_name, const std::string& model_name) {
  require(!data.empty(), "evaluate: dataset is empty");
  require(probabilities.size() == data.size(), "evaluate: number of prediction maps does not match dataset");
  return score(probabilities, data, threshold, dataset_name, model_name);
}

#define ICPS_INSTANTIATE_METRICS(S)                                                                   \
  template ConfusionCounts confusion<S>(std::span<const S>, std::span<const S>, double);             \
  template double mae<S>(std::span<const S>, std::span<const S>);                                    \
  template ImageMetrics image_metrics<S>(std::span<const S>, std::span<const S>, double, std::string);

ICPS_INSTANTIATE_METRICS(float)
ICPS_INSTANTIATE_METRICS(double)

}  // namespace icps
