#include "icps/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "icps/config_json.hpp"
#include "icps/image_io.hpp"
#include "icps/layers.hpp"
#include "icps/rng.hpp"

namespace fs = std::filesystem;

namespace icps {

// ---------------------------------------------------------------- Dataset

SampleBatch Dataset::batch(const std::vector<std::size_t>& indices) const {
  require(!indices.empty(), "Dataset::batch: empty index list");
  const Sample& first = samples_.at(indices.front());
  const Index N = static_cast<Index>(indices.size());
  SampleBatch b;
  b.images = Tensor<float>(N, 3, first.image.h(), first.image.w());
  b.masks = Tensor<float>(N, 1, first.mask.h(), first.mask.w());
  for (Index n = 0; n < N; ++n) {
    const Sample& s = samples_.at(indices[static_cast<std::size_t>(n)]);
    require(s.image.shape() == first.image.shape(), "Dataset::batch: samples have different sizes");
    b.images.flat_sample(n) = s.image.flat_sample(0);
    b.masks.flat_sample(n) = s.mask.flat_sample(0);
    b.ids.push_back(s.id);
  }
  return b;
}

std::vector<SampleBatch> Dataset::batches(std::size_t batch_size) const {
  require(batch_size > 0, "Dataset::batches: batch size must be positive");
  std::vector<SampleBatch> out;
  for (std::size_t start = 0; start < samples_.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples_.size(), start + batch_size); ++i) idx.push_back(i);
    out.push_back(batch(idx));
  }
  return out;
}

namespace {

std::map<std::string, fs::path> png_files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory '" + dir.string() + "'");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") continue;
    out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

Sample load_pair(const std::string& id, const fs::path& image_path, const fs::path& mask_path, Index size) {
  const Image8 img = read_png(image_path, 3);
  const Image8 msk = read_png(mask_path, 1);
  if (img.width != msk.width || img.height != msk.height) {
    throw IoError("image '" + image_path.string() + "' (" + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + ") and mask '" + mask_path.string() + "' (" +
                  std::to_string(msk.width) + "x" + std::to_string(msk.height) + ") differ in size");
  }
  Tensor<float> image(1, 3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        image(0, c, y, x) = static_cast<float>(img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c]) / 255.0f;
  // masks stored as {0, 1} rather than {0, 255} are common; binarize accordingly
  const std::uint8_t peak = msk.pixels.empty() ? 0 : *std::max_element(msk.pixels.begin(), msk.pixels.end());
  const std::uint8_t cut = peak <= 1 ? 1 : 128;
  Tensor<float> mask(1, 1, msk.height, msk.width);
  for (int y = 0; y < msk.height; ++y)
    for (int x = 0; x < msk.width; ++x)
      mask(0, 0, y, x) = msk.pixels[static_cast<std::size_t>(y) * msk.width + x] >= cut ? 1.0f : 0.0f;
  Sample s;
  s.id = id;
  s.image = resize_bilinear(image, size, size);
  s.mask = resize_nearest(mask, size, size);
  for (Index i = 0; i < s.mask.size(); ++i) s.mask.data()[i] = s.mask.data()[i] >= 0.5f ? 1.0f : 0.0f;
  return s;
}

}  // namespace

Dataset load_dataset(const fs::path& root, const std::string& split, Index target_size) {
  require(target_size > 0, "load_dataset: target size must be positive");
  const fs::path base = split.empty() ? root : root / split;
  const auto images = png_files_by_stem(base / "images");
  const auto masks = png_files_by_stem(base / "masks");
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) throw IoError("mask '" + path.string() + "' has no counterpart image");
  for (const auto& [stem, path] : images)
    if (!masks.count(stem)) throw IoError("image '" + path.string() + "' has no counterpart mask");
  if (images.empty()) throw IoError("size-0 dataset at '" + base.string() + "'");
  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (const auto& [stem, path] : images) samples.push_back(load_pair(stem, path, masks.at(stem), target_size));
  return Dataset(std::move(samples));
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& all, double val_fraction, std::uint64_t seed) {
  require(all.size() >= 2, "split_dataset: need at least two samples");
  require(val_fraction > 0.0 && val_fraction < 1.0, "split_dataset: val_fraction must be in (0, 1)");
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(all.size()) * val_fraction));
  n_val = std::clamp<std::size_t>(n_val, 1, all.size() - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<Sample> tr, va;
  for (auto i : train_idx) tr.push_back(all[i]);
  for (auto i : val_idx) va.push_back(all[i]);
  return {Dataset(std::move(tr)), Dataset(std::move(va))};
}

// ---------------------------------------------------------------- synthetic data

void SynthConfig::validate() const {
  if (count <= 0) throw ContractViolation("synth_generate: size-0 dataset (count must be positive)");
  require(canvas >= 32, "SynthConfig: canvas must be at least 32 px");
  require(blob_count_range[0] >= 1 && blob_count_range[1] >= blob_count_range[0],
          "SynthConfig: blob_count_range must satisfy 1 <= min <= max");
  require(blob_radius_range[0] > 0.0 && blob_radius_range[1] >= blob_radius_range[0] && blob_radius_range[1] < 0.5,
          "SynthConfig: blob_radius_range must satisfy 0 < min <= max < 0.5");
  require(boundary_jitter >= 0.0 && boundary_jitter < 0.5, "SynthConfig: boundary_jitter must be in [0, 0.5)");
  require(texture_noise >= 0.0, "SynthConfig: texture_noise must be non-negative");
}

namespace {

struct Blob {
  double cx = 0, cy = 0, r0 = 0;
  std::array<double, 3> amp{};    // harmonics 2, 3, 4
  std::array<double, 3> phase{};
  double extent = 0;  // upper bound on the boundary radius

  double radius(double theta) const {
    double f = 1.0;
    for (int m = 0; m < 3; ++m) f += amp[m] * std::cos((m + 2) * theta + phase[m]);
    return r0 * f;
  }
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

SynthSample synth_render(const SynthConfig& cfg, int index) {
  cfg.validate();
  const int S = cfg.canvas;
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index) * 0xBF58476D1CE4E5B9ull + 1);
  const int k = static_cast<int>(rng.integer(cfg.blob_count_range[0], cfg.blob_count_range[1]));

  std::vector<Blob> blobs;
  for (int b = 0; b < k; ++b) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Blob blob;
      blob.r0 = rng.uniform(cfg.blob_radius_range[0], cfg.blob_radius_range[1]) * S;
      double spread = 0.0;
      for (int m = 0; m < 3; ++m) {
        blob.amp[m] = cfg.boundary_jitter * rng.uniform(-1.0, 1.0) / (m + 1);
        blob.phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        spread += std::abs(blob.amp[m]);
      }
      blob.extent = blob.r0 * (1.0 + spread);
      const double lo = blob.extent + 1.0, hi = S - blob.extent - 1.0;
      if (hi <= lo) continue;
      blob.cx = rng.uniform(lo, hi);
      blob.cy = rng.uniform(lo, hi);
      bool clear = true;
      for (const Blob& other : blobs)
        if (std::hypot(blob.cx - other.cx, blob.cy - other.cy) < blob.extent + other.extent + 2.0) clear = false;
      if (!clear) continue;
      blobs.push_back(blob);
      break;
    }
  }

  // background folds: two low-frequency plane waves
  std::array<double, 2> fx{}, fy{}, ph{};
  for (int i = 0; i < 2; ++i) {
    fx[i] = rng.uniform(0.5, 2.5);
    fy[i] = rng.uniform(0.5, 2.5);
    ph[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const std::array<double, 3> tissue{0.60 + rng.uniform(-0.05, 0.05), 0.34 + rng.uniform(-0.04, 0.04),
                                     0.28 + rng.uniform(-0.04, 0.04)};
  const std::array<double, 3> lesion{0.84 + rng.uniform(-0.04, 0.04), 0.52 + rng.uniform(-0.05, 0.05),
                                     0.40 + rng.uniform(-0.04, 0.04)};

  SynthSample out;
  out.rgb.resize(static_cast<std::size_t>(S) * S * 3);
  out.mask.assign(static_cast<std::size_t>(S) * S, 0);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      int inside = -1;
      double t = 0.0;
      for (std::size_t b = 0; b < blobs.size(); ++b) {
        const double dx = px - blobs[b].cx, dy = py - blobs[b].cy;
        const double d = std::hypot(dx, dy);
        const double r = blobs[b].radius(std::atan2(dy, dx));
        if (d < r) {
          inside = static_cast<int>(b);
          t = d / r;
          break;
        }
      }
      const double luminance_noise = cfg.texture_noise * rng.normal();
      std::array<double, 3> rgb{};
      if (inside >= 0) {
        out.mask[static_cast<std::size_t>(y) * S + x] = 255;
        const double shade = 1.05 - 0.3 * t * t;
        for (int c = 0; c < 3; ++c) rgb[c] = lesion[c] * shade;
      } else {
        const double u = px / S, v = py / S;
        const double folds = 0.07 * std::sin(2.0 * std::numbers::pi * (fx[0] * u + fy[0] * v) + ph[0]) +
                             0.05 * std::sin(2.0 * std::numbers::pi * (fx[1] * u - fy[1] * v) + ph[1]);
        const double rc = std::hypot(u - 0.5, v - 0.5) * std::numbers::sqrt2;
        const double vignette = 1.0 - 0.35 * rc * rc;
        for (int c = 0; c < 3; ++c) rgb[c] = (tissue[c] + folds) * vignette;
      }
      for (int c = 0; c < 3; ++c) {
        const double chroma = 0.25 * cfg.texture_noise * rng.normal();
        out.rgb[(static_cast<std::size_t>(y) * S + x) * 3 + c] = to_byte(rgb[c] + luminance_noise + chroma);
      }
    }
  }
  return out;
}

void synth_generate(const SynthConfig& cfg, const fs::path& out) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "masks", ec);
  if (ec || !fs::is_directory(out / "images") || !fs::is_directory(out / "masks"))
    throw IoError("cannot create dataset directories under '" + out.string() + "'");
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(cfg.count - 1).size()));
  for (int i = 0; i < cfg.count; ++i) {
    const SynthSample s = synth_render(cfg, i);
    std::string id = std::to_string(i);
    id = "synth_" + std::string(static_cast<std::size_t>(std::max<int>(0, digits - static_cast<int>(id.size()))), '0') + id;
    write_png(out / "images" / (id + ".png"), Image8{cfg.canvas, cfg.canvas, 3, s.rgb});
    write_png(out / "masks" / (id + ".png"), Image8{cfg.canvas, cfg.canvas, 1, s.mask});
  }
  write_json_file((out / "synth_config.json").string(), to_json(cfg));
}

// ---------------------------------------------------------------- multi-scale

Index multiscale_size(Index base, double ratio) {
  require(base > 0 && base % 32 == 0, "multiscale_size: base must be a positive multiple of 32");
  require(ratio > 0.0, "multiscale_size: ratio must be positive");
  const double scaled = std::round(static_cast<double>(base) * ratio);
  const Index snapped = static_cast<Index>(std::llround(scaled / 32.0)) * 32;
  if (snapped < 32)
    throw ContractViolation("multiscale_size: " + std::to_string(base) + " x " + std::to_string(ratio) +
                            " snaps below 32");
  return snapped;
}

SampleBatch rescale_batch(const SampleBatch& batch, Index size) {
  SampleBatch out;
  out.images = resize_bilinear(batch.images, size, size);
  out.masks = resize_nearest(batch.masks, size, size);
  out.ids = batch.ids;
  return out;
}

}  // namespace icps
