#pragma once

// H x W x C interleaved floating-point images with a declared intensity range,
// plus the geometric helpers used by the training pipeline.

#include <algorithm>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/tensor.hpp"

namespace rcagan {

enum class Range { unit, signed_unit, byte };  // (0,1), (-1,1), (0,255)

inline std::pair<double, double> range_bounds(Range r) {
  switch (r) {
    case Range::unit: return {0.0, 1.0};
    case Range::signed_unit: return {-1.0, 1.0};
    case Range::byte: return {0.0, 255.0};
  }
  throw std::invalid_argument("unknown range tag");
}

inline std::string to_string(Range r) {
  switch (r) {
    case Range::unit: return "(0,1)";
    case Range::signed_unit: return "(-1,1)";
    case Range::byte: return "(0,255)";
  }
  throw std::invalid_argument("unknown range tag");
}

class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels = 3, Range range = Range::unit,
              double fill = 0.0)
      : height_(height), width_(width), channels_(channels), range_(range), values_(height * width * channels, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  Range range() const noexcept { return range_; }
  void set_range(Range r) noexcept { range_ = r; }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return values_[(y * width_ + x) * channels_ + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return values_[(y * width_ + x) * channels_ + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_extent(const ImageBuffer& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }
  friend bool operator==(const ImageBuffer& a, const ImageBuffer& b) {
    return a.same_extent(b) && a.range_ == b.range_ && a.values_ == b.values_;
  }

 private:
  std::size_t height_ = 0, width_ = 0, channels_ = 0;
  Range range_ = Range::unit;
  std::vector<double> values_;
};

inline void clamp_to_range(ImageBuffer& img) {
  const auto [lo, hi] = range_bounds(img.range());
  for (double& v : img.values()) v = std::clamp(v, lo, hi);
}

// Affine map between intensity ranges.
inline ImageBuffer rescale_range(const ImageBuffer& img, Range target) {
  const auto [slo, shi] = range_bounds(img.range());
  const auto [tlo, thi] = range_bounds(target);
  ImageBuffer out = img;
  out.set_range(target);
  const double scale = (thi - tlo) / (shi - slo);
  for (double& v : out.values()) v = tlo + (v - slo) * scale;
  return out;
}

inline ImageBuffer hflip(const ImageBuffer& img) {
  ImageBuffer out(img.height(), img.width(), img.channels(), img.range());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
  return out;
}

inline ImageBuffer crop(const ImageBuffer& img, std::size_t top, std::size_t left, std::size_t height,
                        std::size_t width) {
  if (top + height > img.height()) throw DimensionError("crop", "H", img.height(), top + height);
  if (left + width > img.width()) throw DimensionError("crop", "W", img.width(), left + width);
  ImageBuffer out(height, width, img.channels(), img.range());
  const std::size_t row = width * img.channels();
  for (std::size_t y = 0; y < height; ++y) {
    const auto src = img.values().subspan(((top + y) * img.width() + left) * img.channels(), row);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(y * row));
  }
  return out;
}

struct PatchOffset {
  std::size_t top = 0;
  std::size_t left = 0;
};

// Uniformly random size x size window.
template <typename Rng>
PatchOffset random_patch_offset(const ImageBuffer& img, std::size_t size, Rng& rng) {
  if (img.height() < size) throw DimensionError("crop_patch", "H", size, img.height());
  if (img.width() < size) throw DimensionError("crop_patch", "W", size, img.width());
  std::uniform_int_distribution<std::size_t> dy(0, img.height() - size), dx(0, img.width() - size);
  const std::size_t top = dy(rng);
  return {top, dx(rng)};
}

template <typename Rng>
ImageBuffer crop_patch(const ImageBuffer& img, std::size_t size, Rng& rng) {
  const auto off = random_patch_offset(img, size, rng);
  return crop(img, off.top, off.left, size, size);
}

// Batch of equally sized images -> NCHW tensor (values copied as-is).
template <typename T>
Tensor<T> to_tensor(std::span<const ImageBuffer> images) {
  if (images.empty()) throw DimensionError("to_tensor", "N", 1, 0);
  const auto& first = images.front();
  const std::size_t h = first.height(), w = first.width(), c = first.channels();
  Tensor<T> out(Shape{images.size(), c, h, w});
  auto dst = out.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (!img.same_extent(first)) throw DimensionError("to_tensor", "extent", h * w * c, img.size());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) dst[((n * c + ch) * h + y) * w + x] = static_cast<T>(img.at(y, x, ch));
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const ImageBuffer& image) {
  return to_tensor<T>(std::span<const ImageBuffer>(&image, 1));
}

template <typename T>
ImageBuffer from_tensor(const Tensor<T>& t, std::size_t index, Range range) {
  if (t.rank() != 4) throw DimensionError("from_tensor", "rank", 4, t.rank());
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  ImageBuffer out(h, w, c, range);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(y, x, ch) = static_cast<double>(t.at(index, ch, y, x));
  return out;
}

}  // namespace rcagan
