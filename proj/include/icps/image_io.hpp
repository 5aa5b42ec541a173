#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace icps {

/// Interleaved 8-bit image, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decode a PNG and convert it to `channels` (1 or 3) 8-bit channels.
Image8 read_png(const std::filesystem::path& path, int channels);

/// Decode a grayscale PNG of any bit depth into values normalized to [0, 1].
std::vector<double> read_png_gray_normalized(const std::filesystem::path& path, int& width, int& height);

void write_png(const std::filesystem::path& path, const Image8& image);

/// 16-bit grayscale PNG.
void write_png16_gray(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& data);

}  // namespace icps
