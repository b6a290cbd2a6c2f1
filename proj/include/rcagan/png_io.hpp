#pragma once

// 8-bit RGB PNG I/O through libpng's simplified API.

#include <png.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/image.hpp"

namespace rcagan {

// Decodes to RGB (gray/alpha are converted), values / 255 in the (0,1) range.
inline ImageBuffer read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DataError("read_png: " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("read_png: " + path.string() + ": " + msg);
  }
  ImageBuffer out(image.height, image.width, 3, Range::unit);
  auto v = out.values();
  for (std::size_t i = 0; i < buffer.size(); ++i) v[i] = static_cast<double>(buffer[i]) / 255.0;
  return out;
}

inline std::vector<png_byte> quantize_8bit(const ImageBuffer& img) {
  const ImageBuffer bytes = img.range() == Range::byte ? img : rescale_range(img, Range::byte);
  std::vector<png_byte> out(bytes.size());
  const auto v = bytes.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<png_byte>(std::lround(std::clamp(v[i], 0.0, 255.0)));
  }
  return out;
}

// Rounds to nearest after mapping the image's range onto (0,255).
inline void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels() != 3) throw DataError("write_png: expected 3 channels, got " + std::to_string(img.channels()));
  auto bytes = quantize_8bit(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw DataError("write_png: " + path.string() + ": " + image.message);
  }
}

// Round-trips an image through 8-bit quantization, keeping its range.
inline ImageBuffer quantized(const ImageBuffer& img) {
  const auto bytes = quantize_8bit(img);
  ImageBuffer unit(img.height(), img.width(), img.channels(), Range::unit);
  auto v = unit.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<double>(bytes[i]) / 255.0;
  return img.range() == Range::unit ? unit : rescale_range(unit, img.range());
}

}  // namespace rcagan
