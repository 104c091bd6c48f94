#pragma once

// 8-bit PNG reading and writing (libpng simplified API).

#include <png.h>

#include <cstdint>
#include <string>
#include <vector>

#include "dpa/errors.hpp"

namespace dpa {

/// Interleaved 8-bit image, row-major, channels 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int y, int x, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c = 0) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Decodes a PNG. Color inputs become RGB, everything else gray; alpha is dropped.
inline Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image " + path + ": " + msg);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), color ? 3 : 1);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image " + path + ": " + msg);
  }
  return out;
}

inline void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ArgumentError("write_png: 1 or 3 channels expected");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot write image " + path + ": " + msg);
  }
}

}  // namespace dpa
