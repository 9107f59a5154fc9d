#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn::io {

/// Decodes an 8-bit gray or RGB(A) PNG into [C,H,W] floats in [0,1]
/// (value / 255). Alpha is dropped.
inline Tensor<float> read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw IoError("unsupported PNG " + path.string() + ": only 8 bits per channel are accepted");
  }
  const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t C = color ? 3 : 1, H = image.height, W = image.width;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  Tensor<float> out({C, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) out(c, y, x) = static_cast<float>(buf[(y * W + x) * C + c] / 255.0);
  return out;
}

/// Encodes [C,H,W] values in [0,1] (C = 1 or 3) as an 8-bit PNG.
inline void write_png(const std::filesystem::path& path, const Tensor<float>& pixels) {
  const std::size_t C = pixels.extent(0), H = pixels.extent(1), W = pixels.extent(2);
  if (C != 1 && C != 3) throw ConfigError("write_png: only 1 or 3 channels are supported");
  std::vector<png_byte> buf(C * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::round(static_cast<double>(pixels(c, y, x)) * 255.0);
        buf[(y * W + x) * C + c] = static_cast<png_byte>(std::clamp(v, 0.0, 255.0));
      }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace capsdbn::io
