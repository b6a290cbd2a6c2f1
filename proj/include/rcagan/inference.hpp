#pragma once

// Whole-image and tiled x4 inference with a trained generator.

#include <algorithm>
#include <vector>

#include "rcagan/image.hpp"
#include "rcagan/models.hpp"

namespace rcagan {

struct TileOptions {
  std::size_t tile = 0;     // LR core extent per tile; 0 runs the whole image at once
  std::size_t overlap = 16;  // LR context per side; the inner half is cross-faded, the outer half dropped
};

namespace detail {

template <typename T>
ImageBuffer generate_unit(const ModelParams<T>& params, const ImageBuffer& lr) {
  NoGradGuard guard;
  ImageBuffer in = lr.range() == Range::unit ? lr : rescale_range(lr, Range::unit);
  clamp_to_range(in);
  auto out = from_tensor(generator_forward(to_tensor<T>(in), params), 0, Range::signed_unit);
  auto unit = rescale_range(out, Range::unit);
  clamp_to_range(unit);
  return unit;
}

// Distance-based weight inside a padded tile: 0 over the outer half of the
// context margin next to a cut edge, rising linearly to 1 across the inner half.
// Image borders are not cut edges.
inline double edge_weight(std::size_t pos, std::size_t begin, std::size_t end, std::size_t full, std::size_t margin) {
  if (margin == 0) return 1.0;
  const double m = static_cast<double>(margin);
  double w = 1.0;
  if (begin > 0) w = std::min(w, (static_cast<double>(pos - begin) + 0.5 - m / 2.0) / m);
  if (end < full) w = std::min(w, (static_cast<double>(end - pos) - 0.5 - m / 2.0) / m);
  return std::clamp(w, 0.0, 1.0);
}

}  // namespace detail

// LR image (any range) -> 4x SR image in (0,1).
template <typename T>
ImageBuffer super_resolve(const ModelParams<T>& params, const ImageBuffer& lr, const TileOptions& opt = {}) {
  if (lr.channels() != 3) throw DataError("super_resolve: expected 3 channels, got " + std::to_string(lr.channels()));
  const std::size_t h = lr.height(), w = lr.width();
  if (opt.tile == 0 || (h <= opt.tile && w <= opt.tile)) return detail::generate_unit(params, lr);

  const std::size_t s = 4, margin = opt.overlap * s;
  ImageBuffer acc(h * s, w * s, 3, Range::unit);
  std::vector<double> weight(h * s * w * s, 0.0);
  for (std::size_t ty = 0; ty < h; ty += opt.tile)
    for (std::size_t tx = 0; tx < w; tx += opt.tile) {
      const std::size_t y0 = ty > opt.overlap ? ty - opt.overlap : 0;
      const std::size_t x0 = tx > opt.overlap ? tx - opt.overlap : 0;
      const std::size_t y1 = std::min(h, ty + opt.tile + opt.overlap);
      const std::size_t x1 = std::min(w, tx + opt.tile + opt.overlap);
      const auto out = detail::generate_unit(params, crop(lr, y0, x0, y1 - y0, x1 - x0));
      for (std::size_t y = 0; y < out.height(); ++y) {
        const std::size_t gy = y0 * s + y;
        const double wy = detail::edge_weight(gy, y0 * s, y1 * s, h * s, margin);
        for (std::size_t x = 0; x < out.width(); ++x) {
          const std::size_t gx = x0 * s + x;
          const double wt = wy * detail::edge_weight(gx, x0 * s, x1 * s, w * s, margin);
          weight[gy * w * s + gx] += wt;
          for (std::size_t c = 0; c < 3; ++c) acc.at(gy, gx, c) += wt * out.at(y, x, c);
        }
      }
    }
  for (std::size_t y = 0; y < h * s; ++y)
    for (std::size_t x = 0; x < w * s; ++x)
      for (std::size_t c = 0; c < 3; ++c) acc.at(y, x, c) /= weight[y * w * s + x];
  return acc;
}

}  // namespace rcagan
