#include "icps/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "icps/errors.hpp"

namespace icps {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(std::string("cannot open '") + path.string() + "' (" + mode + ")");
  return f;
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint8_t> bytes;  // 16-bit samples stored big-endian as in the file
};

// Decodes to gray or RGB (alpha stripped, palette expanded). 16-bit kept unless strip16.
Decoded decode(const std::filesystem::path& path, int want_channels, bool strip16) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  Decoded out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unreadable PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (strip16 && depth == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  const bool is_gray = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (want_channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (want_channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = static_cast<int>(png_get_channels(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != want_channels)
    throw IoError("'" + path.string() + "': could not convert to " + std::to_string(want_channels) + " channels");
  return out;
}

void encode(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
            const std::uint8_t* bytes) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) png_write_row(png, bytes + rowbytes * y);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image8 read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ContractViolation("read_png: channels must be 1 or 3");
  Decoded d = decode(path, channels, true);
  return Image8{d.width, d.height, d.channels, std::move(d.bytes)};
}

std::vector<double> read_png_gray_normalized(const std::filesystem::path& path, int& width, int& height) {
  const Decoded d = decode(path, 1, false);
  width = d.width;
  height = d.height;
  const std::size_t count = static_cast<std::size_t>(d.width) * d.height;
  std::vector<double> out(count);
  if (d.bit_depth == 16) {
    for (std::size_t i = 0; i < count; ++i)
      out[i] = static_cast<double>((d.bytes[2 * i] << 8) | d.bytes[2 * i + 1]) / 65535.0;
  } else {
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(d.bytes[i]) / 255.0;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractViolation("write_png: channels must be 1 or 3");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels)
    throw ContractViolation("write_png: pixel buffer size does not match dimensions");
  encode(path, image.width, image.height, image.channels, 8, image.pixels.data());
}

void write_png16_gray(const std::filesystem::path& path, int width, int height,
                      const std::vector<std::uint16_t>& data) {
  if (data.size() != static_cast<std::size_t>(width) * height)
    throw ContractViolation("write_png16_gray: buffer size does not match dimensions");
  std::vector<std::uint8_t> bytes(data.size() * 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(data[i] >> 8);  // PNG samples are big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(data[i] & 0xff);
  }
  encode(path, width, height, 1, 16, bytes.data());
}

}  // namespace icps
