#pragma once

// The six generator loss terms, the discriminator loss, and their weighted
// composite. Pixel, gradient and content terms take (-1,1) tensors; SSIM and
// MS-SSIM indices take (0,1) tensors (the composite remaps internally).

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/layers.hpp"
#include "rcagan/ops.hpp"
#include "rcagan/tensor.hpp"

namespace rcagan {

struct LossWeights {
  double cgan = 1.0;      // lambda1
  double pixel = 1.0;     // lambda2
  double gradient = 10.0; // lambda3
  double content = 0.2;   // lambda4
  double ssim = 0.1;      // lambda5
  double msssim = 0.1;    // lambda6
  double content_inner = 10.0;

  void validate() const {
    for (double w : {cgan, pixel, gradient, content, ssim, msssim, content_inner}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    }
  }
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rank() != b.rank()) throw DimensionError(op, "rank", a.rank(), b.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) throw DimensionError(op, "axis " + std::to_string(i), a.dim(i), b.dim(i));
  }
}

}  // namespace detail

inline constexpr double kProbabilityClamp = 1e-7;

template <typename T>
struct AdversarialLosses {
  Tensor<T> g_loss;  // mean -log D(fake)
  Tensor<T> d_loss;  // mean -[log D(real) + log(1 - D(fake))]
};

template <typename T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& d_fake) {
  const T eps = static_cast<T>(kProbabilityClamp);
  return affine(mean(log(clamp(d_fake, eps, T(1) - eps))), T(-1));
}

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  const T eps = static_cast<T>(kProbabilityClamp);
  auto real_term = mean(log(clamp(d_real, eps, T(1) - eps)));
  auto fake_term = mean(log(affine(clamp(d_fake, eps, T(1) - eps), T(-1), T(1))));
  return affine(add(real_term, fake_term), T(-1));
}

// Binary cross-entropy with real target `real_label` (< 1 for one-sided smoothing) and fake target 0.
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake, double real_label) {
  auto loss = discriminator_loss(d_real, d_fake);
  if (real_label >= 1.0) return loss;
  const T eps = static_cast<T>(kProbabilityClamp);
  // -[y log d + (1 - y) log(1 - d)] = -log d - (1 - y) (log(1 - d) - log d)
  auto d = clamp(d_real, eps, T(1) - eps);
  auto logit_gap = sub(mean(log(affine(d, T(-1), T(1)))), mean(log(d)));
  return sub(loss, affine(logit_gap, static_cast<T>(1.0 - real_label)));
}

template <typename T>
AdversarialLosses<T> adversarial_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return {generator_adversarial_loss(d_fake), discriminator_loss(d_real, d_fake)};
}

template <typename T>
Tensor<T> pixel_l1(const Tensor<T>& sr, const Tensor<T>& hr) {
  detail::require_same_shape(sr, hr, "pixel_l1");
  return mean(abs(sub(sr, hr)));
}

// Forward differences along W and H; the last column/row has no partner.
template <typename T>
Tensor<T> gradient_l1(const Tensor<T>& sr, const Tensor<T>& hr) {
  detail::require_same_shape(sr, hr, "gradient_l1");
  auto horizontal = mean(abs(sub(diff(sr, 3), diff(hr, 3))));
  auto vertical = mean(abs(sub(diff(sr, 2), diff(hr, 2))));
  return affine(add(horizontal, vertical), T(0.5));
}

// Frozen conv stack standing in for a pretrained perceptual network. Any
// list of conv layers can be plugged in; the loss uses the last layer's output.
template <typename T>
class FeatureExtractor {
 public:
  struct Layer {
    Tensor<T> weight;  // Cout x Cin x k x k
    Tensor<T> bias;
    std::size_t pad = 1, stride = 2;
  };

  FeatureExtractor() = default;
  explicit FeatureExtractor(std::vector<Layer> layers, double slope = 0.2) : layers_(std::move(layers)), slope_(slope) {
    for (auto& l : layers_) {
      l.weight.set_requires_grad(false);
      l.bias.set_requires_grad(false);
    }
  }

  // 3 -> 16 -> 32 -> 64 -> 64, 3x3 stride 2, LReLU(0.2), fixed seed.
  static FeatureExtractor make_default(std::uint64_t seed = 0x5eed) {
    std::mt19937_64 rng(seed);
    const std::size_t chans[] = {3, 16, 32, 64, 64};
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t in = chans[i], out = chans[i + 1];
      std::normal_distribution<double> w(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)));
      std::uniform_real_distribution<double> b(-0.1, 0.1);
      Tensor<T> weight(Shape{out, in, 3, 3}), bias(Shape{out});
      for (auto& v : weight.data()) v = static_cast<T>(w(rng));
      for (auto& v : bias.data()) v = static_cast<T>(b(rng));
      layers.push_back({weight, bias, 1, 2});
    }
    return FeatureExtractor(std::move(layers));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (layers_.empty()) throw ConfigError("FeatureExtractor has no layers");
    Tensor<T> h = x;
    for (const auto& l : layers_) {
      h = activation(conv2d(h, l.weight, l.bias, l.pad, l.stride), Activation::leaky_relu(slope_));
    }
    return h;
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }

 private:
  std::vector<Layer> layers_;
  double slope_ = 0.2;
};

// mean over positions of (1 - cos) between channel vectors of a and b.
template <typename T>
Tensor<T> cosine_distance(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "cosine_distance");
  const T eps2 = std::numeric_limits<T>::min() * T(1e6);
  auto dot = sum_axis(mul(a, b), 1);
  auto norms = mul(sum_axis(square(a), 1), sum_axis(square(b), 1));
  auto denom = sqrt(clamp(norms, eps2, std::numeric_limits<T>::max()));
  return affine(mean(div(dot, denom)), T(-1), T(1));
}

template <typename T>
Tensor<T> content_loss_from_features(const Tensor<T>& f_sr, const Tensor<T>& f_hr, double inner) {
  detail::require_same_shape(f_sr, f_hr, "content_loss");
  auto l1 = mean(abs(sub(f_hr, f_sr)));
  return add(affine(l1, static_cast<T>(inner)), cosine_distance(f_hr, f_sr));
}

template <typename T>
Tensor<T> content_loss(const Tensor<T>& sr, const Tensor<T>& hr, const FeatureExtractor<T>& phi, double inner = 10.0) {
  detail::require_same_shape(sr, hr, "content_loss");
  return content_loss_from_features(phi(sr), phi(hr), inner);
}

// ---- SSIM family ---------------------------------------------------------

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03, peak = 1.0;
};

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = static_cast<double>(size - 1) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

template <typename T>
struct SsimMaps {
  Tensor<T> ssim;  // l * cs per valid window position
  Tensor<T> cs;    // contrast-structure term only
};

template <typename T>
SsimMaps<T> ssim_maps(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}) {
  detail::require_same_shape(x, y, "ssim");
  if (x.rank() != 4) throw DimensionError("ssim", "rank", 4, x.rank());
  if (x.dim(2) < opt.window) throw DimensionError("ssim", "H", opt.window, x.dim(2));
  if (x.dim(3) < opt.window) throw DimensionError("ssim", "W", opt.window, x.dim(3));
  std::vector<T> g;
  for (double v : gaussian_window(opt.window, opt.sigma)) g.push_back(static_cast<T>(v));
  const T c1 = static_cast<T>((opt.k1 * opt.peak) * (opt.k1 * opt.peak));
  const T c2 = static_cast<T>((opt.k2 * opt.peak) * (opt.k2 * opt.peak));
  auto mu_x = separable_filter_valid(x, g);
  auto mu_y = separable_filter_valid(y, g);
  auto mu_xx = square(mu_x), mu_yy = square(mu_y), mu_xy = mul(mu_x, mu_y);
  auto s_xx = sub(separable_filter_valid(square(x), g), mu_xx);
  auto s_yy = sub(separable_filter_valid(square(y), g), mu_yy);
  auto s_xy = sub(separable_filter_valid(mul(x, y), g), mu_xy);
  auto lum = div(affine(mu_xy, T(2), c1), affine(add(mu_xx, mu_yy), T(1), c1));
  auto cs = div(affine(s_xy, T(2), c2), affine(add(s_xx, s_yy), T(1), c2));
  return {mul(lum, cs), cs};
}

// Mean local SSIM over all images, channels and valid positions.
template <typename T>
Tensor<T> ssim_index(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}) {
  return mean(ssim_maps(x, y, opt).ssim);
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}) {
  return affine(ssim_index(x, y, opt), T(-1), T(1));
}

inline constexpr std::array<double, 5> kMsssimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
// Per-scale terms are floored before the fractional power, which is
// undefined for negative bases.
inline constexpr double kMsssimFloor = 1e-6;

// Largest M <= max_scales with min(H, W) / 2^(M-1) >= window.
inline std::size_t msssim_scale_count(std::size_t h, std::size_t w, std::size_t window = 11,
                                      std::size_t max_scales = 5) {
  std::size_t m = 0, e = std::min(h, w);
  while (m < max_scales && e >= window) {
    ++m;
    e /= 2;
  }
  return m;
}

inline std::vector<double> msssim_weights(std::size_t scales) {
  std::vector<double> w(kMsssimWeights.begin(), kMsssimWeights.begin() + static_cast<std::ptrdiff_t>(scales));
  double s = 0.0;
  for (double v : w) s += v;
  for (auto& v : w) v /= s;
  return w;
}

// prod_{j<M} cs_j^w_j * ssim_M^w_M per image, then averaged over the batch.
template <typename T>
Tensor<T> msssim_index(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}, std::size_t max_scales = 5) {
  detail::require_same_shape(x, y, "msssim");
  if (x.rank() != 4) throw DimensionError("msssim", "rank", 4, x.rank());
  const std::size_t m = msssim_scale_count(x.dim(2), x.dim(3), opt.window, max_scales);
  if (m == 0) throw DimensionError("msssim", "extent", opt.window, std::min(x.dim(2), x.dim(3)));
  const auto w = msssim_weights(m);
  const T floor = static_cast<T>(kMsssimFloor), top = std::numeric_limits<T>::max();
  Tensor<T> a = x, b = y, product;
  for (std::size_t j = 0; j < m; ++j) {
    auto maps = ssim_maps(a, b, opt);
    auto term = mean_per_sample(j + 1 == m ? maps.ssim : maps.cs);
    auto powered = pow(clamp(term, floor, top), static_cast<T>(w[j]));
    product = j == 0 ? powered : mul(product, powered);
    if (j + 1 < m) {
      a = avg_pool2(a);
      b = avg_pool2(b);
    }
  }
  return mean(product);
}

template <typename T>
Tensor<T> msssim_loss(const Tensor<T>& x, const Tensor<T>& y, const SsimOptions& opt = {}, std::size_t max_scales = 5) {
  return affine(msssim_index(x, y, opt, max_scales), T(-1), T(1));
}

// ---- composite -------------------------------------------------------------

struct TermReport {
  double cgan = 0.0, pixel = 0.0, gradient = 0.0, content = 0.0, ssim = 0.0, msssim = 0.0;
  LossWeights weights;

  double weighted_cgan() const { return weights.cgan * cgan; }
  double weighted_pixel() const { return weights.pixel * pixel; }
  double weighted_gradient() const { return weights.gradient * gradient; }
  double weighted_content() const { return weights.content * content; }
  double weighted_ssim() const { return weights.ssim * ssim; }
  double weighted_msssim() const { return weights.msssim * msssim; }

  // Unweighted terms as key=value pairs.
  std::string to_kv() const {
    std::ostringstream os;
    os.precision(9);
    os << "cgan=" << cgan << " l1=" << pixel << " gradient=" << gradient << " content=" << content
       << " ssim=" << ssim << " msssim=" << msssim;
    return os.str();
  }
};

template <typename T>
struct CompositeLoss {
  Tensor<T> total;
  TermReport report;
};

// sr, hr in (-1,1). d_fake = D's output on (lr, sr) with the graph kept, or
// nullopt when the adversarial term is disabled. Terms with zero weight are
// evaluated for the report only, outside the graph.
template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& sr, const Tensor<T>& hr,
                                const std::type_identity_t<std::optional<Tensor<T>>>& d_fake,
                                const FeatureExtractor<T>& phi, const LossWeights& w) {
  w.validate();
  detail::require_same_shape(sr, hr, "composite_loss");
  if (w.cgan > 0.0 && !d_fake) throw ConfigError("composite_loss: cgan weight > 0 needs discriminator output");
  CompositeLoss<T> out;
  out.report.weights = w;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  auto accumulate = [&](double weight, double& slot, auto&& fn) {
    if (weight > 0.0) {
      auto term = fn();
      slot = static_cast<double>(term.item());
      total = add(total, affine(term, static_cast<T>(weight)));
    } else {
      NoGradGuard guard;
      slot = static_cast<double>(fn().item());
    }
  };
  if (d_fake) {
    accumulate(w.cgan, out.report.cgan, [&] { return generator_adversarial_loss(*d_fake); });
  } else {
    out.report.cgan = std::numeric_limits<double>::quiet_NaN();
  }
  accumulate(w.pixel, out.report.pixel, [&] { return pixel_l1(sr, hr); });
  accumulate(w.gradient, out.report.gradient, [&] { return gradient_l1(sr, hr); });
  accumulate(w.content, out.report.content, [&] { return content_loss(sr, hr, phi, w.content_inner); });
  const bool ssim_fits = sr.dim(2) >= 11 && sr.dim(3) >= 11;
  if (ssim_fits) {
    auto sr01 = affine(sr, T(0.5), T(0.5));
    auto hr01 = affine(hr, T(0.5), T(0.5));
    accumulate(w.ssim, out.report.ssim, [&] { return ssim_loss(sr01, hr01); });
    accumulate(w.msssim, out.report.msssim, [&] { return msssim_loss(sr01, hr01); });
  } else if (w.ssim > 0.0 || w.msssim > 0.0) {
    throw DimensionError("composite_loss", "extent", 11, std::min(sr.dim(2), sr.dim(3)));
  }
  out.total = total;
  return out;
}

}  // namespace rcagan
