#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "icps/tensor.hpp"

namespace icps {

/// Images (N, 3, S, S) in [0, 1], binary masks (N, 1, S, S), and sample ids.
struct SampleBatch {
  Tensor<float> images;
  Tensor<float> masks;
  std::vector<std::string> ids;

  Index size() const { return images.n(); }
};

struct Sample {
  std::string id;
  Tensor<float> image;  // (1, 3, S, S)
  Tensor<float> mask;   // (1, 1, S, S)
};

/// In-memory dataset in deterministic (lexicographic) order.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {}

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }

  SampleBatch batch(const std::vector<std::size_t>& indices) const;
  /// Consecutive batches in dataset order; the last one may be short.
  std::vector<SampleBatch> batches(std::size_t batch_size) const;

 private:
  std::vector<Sample> samples_;
};

/// Reads `<root>/<split>/images/*.png` and name-matched `<root>/<split>/masks/*.png`.
/// An empty `split` reads `<root>/images` and `<root>/masks` directly.
Dataset load_dataset(const std::filesystem::path& root, const std::string& split, Index target_size);

/// Seeded partition into (train, val); val receives round(n * val_fraction) samples, at least one.
std::pair<Dataset, Dataset> split_dataset(const Dataset& all, double val_fraction, std::uint64_t seed);

struct SynthConfig {
  int count = 200;
  int canvas = 96;
  std::array<int, 2> blob_count_range{1, 3};
  std::array<double, 2> blob_radius_range{0.1, 0.22};  // fraction of canvas
  double boundary_jitter = 0.15;
  double texture_noise = 0.08;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  std::vector<std::uint8_t> rgb;   // canvas * canvas * 3
  std::vector<std::uint8_t> mask;  // canvas * canvas, values {0, 255}
};

/// Renders sample `index` of the synthetic set; independent of other indices.
SynthSample synth_render(const SynthConfig& cfg, int index);

/// Writes images/, masks/ and synth_config.json under `out`.
void synth_generate(const SynthConfig& cfg, const std::filesystem::path& out);

/// round(base * ratio) snapped to the nearest multiple of 32.
Index multiscale_size(Index base, double ratio);

/// Bilinear resize of images and nearest-neighbour resize of masks.
SampleBatch rescale_batch(const SampleBatch& batch, Index size);

}  // namespace icps
