#pragma once

// Separable bicubic resampling with a Keys cubic kernel (a = -0.5) and
// clamp-to-edge extension.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rcagan/image.hpp"

namespace rcagan {

inline double cubic_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// Output extent = input * num / den.
struct ScaleFactor {
  std::size_t num = 1;
  std::size_t den = 1;

  static constexpr ScaleFactor down(std::size_t k) { return {1, k}; }
  static constexpr ScaleFactor up(std::size_t k) { return {k, 1}; }
};

struct ResampleOptions {
  // Widen the kernel by the downsampling factor (MATLAB imresize style).
  bool antialias = false;
};

struct ResampleTap {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

// Contributing source indices and normalized weights for every output sample
// along one axis.
inline std::vector<ResampleTap> resample_taps(std::size_t in, std::size_t out, ScaleFactor f,
                                              ResampleOptions opt = {}) {
  const double scale = static_cast<double>(f.num) / static_cast<double>(f.den);
  const double widen = (opt.antialias && scale < 1.0) ? 1.0 / scale : 1.0;
  const double support = 2.0 * widen;
  std::vector<ResampleTap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const auto first = static_cast<long>(std::floor(center - support)) + 1;
    const auto last = static_cast<long>(std::ceil(center + support)) - 1;
    double total = 0.0;
    for (long s = first; s <= last; ++s) {
      const double w = cubic_kernel((center - static_cast<double>(s)) / widen);
      if (w == 0.0) continue;
      const long clamped = std::clamp<long>(s, 0, static_cast<long>(in) - 1);
      taps[i].index.push_back(static_cast<std::size_t>(clamped));
      taps[i].weight.push_back(w);
      total += w;
    }
    for (double& w : taps[i].weight) w /= total;
  }
  return taps;
}

inline ImageBuffer bicubic_resample(const ImageBuffer& img, ScaleFactor f, ResampleOptions opt = {}) {
  if (f.num == 0 || f.den == 0) throw std::invalid_argument("bicubic_resample: zero scale factor");
  if ((img.height() * f.num) % f.den != 0 || (img.width() * f.num) % f.den != 0) {
    throw DataError("bicubic_resample: extents " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                    " are not divisible by " + std::to_string(f.den) + "; crop the image first");
  }
  const std::size_t oh = img.height() * f.num / f.den, ow = img.width() * f.num / f.den, c = img.channels();
  const auto tx = resample_taps(img.width(), ow, f, opt);
  const auto ty = resample_taps(img.height(), oh, f, opt);

  ImageBuffer horiz(img.height(), ow, c, img.range());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t t = 0; t < tx[x].index.size(); ++t) acc += tx[x].weight[t] * img.at(y, tx[x].index[t], ch);
        horiz.at(y, x, ch) = acc;
      }
  ImageBuffer out(oh, ow, c, img.range());
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t t = 0; t < ty[y].index.size(); ++t) acc += ty[y].weight[t] * horiz.at(ty[y].index[t], x, ch);
        out.at(y, x, ch) = acc;
      }
  clamp_to_range(out);
  return out;
}

// Pixel replication / decimation, used as a reference baseline.
inline ImageBuffer nearest_resample(const ImageBuffer& img, ScaleFactor f) {
  const std::size_t oh = img.height() * f.num / f.den, ow = img.width() * f.num / f.den;
  ImageBuffer out(oh, ow, img.channels(), img.range());
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t sy = std::min(img.height() - 1, (2 * y + 1) * f.den / (2 * f.num));
      const std::size_t sx = std::min(img.width() - 1, (2 * x + 1) * f.den / (2 * f.num));
      for (std::size_t ch = 0; ch < img.channels(); ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
    }
  return out;
}

}  // namespace rcagan
