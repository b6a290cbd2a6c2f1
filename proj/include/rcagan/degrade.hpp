#pragma once

// Synthetic real-world degradation: Gaussian, Poisson, and salt-and-pepper
// noise applied in that order to a (0,1) image.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "rcagan/errors.hpp"
#include "rcagan/image.hpp"
#include "rcagan/resample.hpp"

namespace rcagan {

struct DegradationSpec {
  bool gaussian = true;
  bool poisson = true;
  bool salt_pepper = true;
  double gaussian_sigma = 0.05;  // intensity units on (0,1)
  double poisson_scale = 255.0;  // photons per unit intensity
  double sp_density = 0.01;      // fraction of pixels hit
  std::uint64_t rng_seed = 0;

  static DegradationSpec none() {
    DegradationSpec s;
    s.gaussian = s.poisson = s.salt_pepper = false;
    return s;
  }

  void validate() const {
    if (!(gaussian_sigma >= 0.0)) throw ConfigError("gaussian_sigma must be >= 0");
    if (!(poisson_scale > 0.0)) throw ConfigError("poisson_scale must be > 0");
    if (!(sp_density >= 0.0 && sp_density <= 1.0)) throw ConfigError("sp_density must lie in [0, 1]");
  }
};

inline ImageBuffer degrade(const ImageBuffer& img, const DegradationSpec& spec) {
  spec.validate();
  if (img.range() != Range::unit) throw ConfigError("degrade: input must be in the (0,1) range");
  ImageBuffer out = img;
  std::mt19937_64 rng(spec.rng_seed);
  if (spec.gaussian && spec.gaussian_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.gaussian_sigma);
    for (double& v : out.values()) v += noise(rng);
    clamp_to_range(out);
  }
  if (spec.poisson) {
    for (double& v : out.values()) {
      std::poisson_distribution<long> photons(v * spec.poisson_scale);
      v = v > 0.0 ? static_cast<double>(photons(rng)) / spec.poisson_scale : 0.0;
    }
    clamp_to_range(out);
  }
  if (spec.salt_pepper && spec.sp_density > 0.0) {
    std::bernoulli_distribution hit(spec.sp_density), salt(0.5);
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) {
        if (!hit(rng)) continue;
        const double v = salt(rng) ? 1.0 : 0.0;
        for (std::size_t c = 0; c < out.channels(); ++c) out.at(y, x, c) = v;
      }
  }
  return out;
}

// HR -> bicubic x4 downsample -> noise.
inline ImageBuffer make_low_resolution(const ImageBuffer& hr, const DegradationSpec& spec, std::size_t factor = 4) {
  return degrade(bicubic_resample(hr, ScaleFactor::down(factor)), spec);
}

}  // namespace rcagan
