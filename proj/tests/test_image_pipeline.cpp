#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "rcagan/dataset.hpp"
#include "rcagan/degrade.hpp"
#include "rcagan/image.hpp"
#include "rcagan/png_io.hpp"
#include "rcagan/resample.hpp"

namespace rcagan {
namespace {

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
  return s / static_cast<double>(a.size());
}

TEST(CubicKernel, PartitionOfUnityAtEveryPhase) {
  for (int k = 0; k <= 100; ++k) {
    const double phase = k / 100.0;
    double total = 0.0;
    for (int t = -2; t <= 2; ++t) total += cubic_kernel(phase - t);
    EXPECT_NEAR(total, 1.0, 1e-9) << "phase " << phase;
  }
  for (auto f : {ScaleFactor::down(4), ScaleFactor::up(4)}) {
    for (bool aa : {false, true}) {
      const std::size_t in = f.den == 1 ? 16 : 64;
      for (const auto& tap : resample_taps(in, in * f.num / f.den, f, {aa})) {
        double total = 0.0;
        for (double w : tap.weight) total += w;
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Bicubic, ConstantImageIsPreserved) {
  ImageBuffer img(16, 12, 3, Range::unit, 0.5);
  auto down = bicubic_resample(img, ScaleFactor::down(4));
  ASSERT_EQ(down.height(), 4u);
  ASSERT_EQ(down.width(), 3u);
  for (double v : down.values()) EXPECT_NEAR(v, 0.5, 1e-6);
  auto up = bicubic_resample(down, ScaleFactor::up(4));
  ASSERT_EQ(up.height(), 16u);
  for (double v : up.values()) EXPECT_NEAR(v, 0.5, 1e-6);
}

TEST(Bicubic, LinearRampKeepsSlope) {
  ImageBuffer ramp(8, 8, 3, Range::unit);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < 3; ++c) ramp.at(y, x, c) = x / 7.0;
  auto down = bicubic_resample(ramp, ScaleFactor::down(4));
  ASSERT_EQ(down.width(), 2u);
  // Output samples sit at source x = 1.5 and 5.5; taps at distances 0.5 and 1.5.
  const double w_near = cubic_kernel(0.5), w_far = cubic_kernel(1.5);
  const double left = (w_far * 0 + w_near * 1 + w_near * 2 + w_far * 3) / 7.0;
  const double right = (w_far * 4 + w_near * 5 + w_near * 6 + w_far * 7) / 7.0;
  for (std::size_t y = 0; y < 2; ++y) {
    EXPECT_NEAR(down.at(y, 0, 0), left, 1e-3);
    EXPECT_NEAR(down.at(y, 1, 0), right, 1e-3);
  }
  EXPECT_NEAR(down.at(0, 1, 0) - down.at(0, 0, 0), 4.0 / 7.0, 1e-3);
}

TEST(Bicubic, RoundTripBeatsNearestNeighbour) {
  const auto img = procedural_texture(64, 64, 3);
  const auto cubic = bicubic_resample(bicubic_resample(img, ScaleFactor::down(4)), ScaleFactor::up(4));
  const auto nearest = nearest_resample(nearest_resample(img, ScaleFactor::down(4)), ScaleFactor::up(4));
  const double psnr_cubic = 10 * std::log10(1.0 / mse(img, cubic));
  const double psnr_nearest = 10 * std::log10(1.0 / mse(img, nearest));
  EXPECT_GT(psnr_cubic, psnr_nearest);
}

TEST(Bicubic, NonDivisibleExtentIsRejected) {
  ImageBuffer img(10, 8, 3);
  EXPECT_THROW(bicubic_resample(img, ScaleFactor::down(4)), DataError);
}

TEST(Bicubic, OutputRespectsRange) {
  ImageBuffer img(8, 8, 3, Range::unit, 0.0);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t c = 0; c < 3; ++c) img.at(y, 4, c) = 1.0;  // sharp line overshoots
  auto up = bicubic_resample(img, ScaleFactor::up(4));
  for (double v : up.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Degrade, AllDisabledIsIdentity) {
  const auto img = procedural_texture(32, 32, 1);
  EXPECT_EQ(degrade(img, DegradationSpec::none()), img);
}

TEST(Degrade, FullSaltPepperDensity) {
  auto spec = DegradationSpec::none();
  spec.salt_pepper = true;
  spec.sp_density = 1.0;
  const auto out = degrade(ImageBuffer(32, 32, 3, Range::unit, 0.4), spec);
  std::size_t salt = 0;
  for (double v : out.values()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    salt += v == 1.0;
  }
  // Salt and pepper are equally likely.
  EXPECT_NEAR(static_cast<double>(salt) / out.size(), 0.5, 0.05);
}

TEST(Degrade, GaussianSampleStatistics) {
  auto spec = DegradationSpec::none();
  spec.gaussian = true;
  spec.gaussian_sigma = 0.1;
  spec.rng_seed = 42;
  const auto out = degrade(ImageBuffer(256, 256, 3, Range::unit, 0.5), spec);
  double m = 0.0;
  for (double v : out.values()) m += v;
  m /= out.size();
  double var = 0.0;
  for (double v : out.values()) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / (out.size() - 1));
  EXPECT_NEAR(sd, 0.1, 0.005);
  EXPECT_NEAR(m, 0.5, 0.002);
}

TEST(Degrade, PoissonMatchesPhotonStatistics) {
  auto spec = DegradationSpec::none();
  spec.poisson = true;
  spec.poisson_scale = 100.0;
  const auto out = degrade(ImageBuffer(128, 128, 3, Range::unit, 0.5), spec);
  double m = 0.0, m2 = 0.0;
  for (double v : out.values()) {
    m += v;
    m2 += v * v;
  }
  m /= out.size();
  const double var = m2 / out.size() - m * m;
  EXPECT_NEAR(m, 0.5, 0.005);
  EXPECT_NEAR(var, 0.5 / 100.0, 0.0005);  // counts ~ Poisson(50), divided by 100
}

TEST(Degrade, DeterministicGivenSeedAndInRange) {
  const auto img = procedural_texture(32, 32, 5);
  DegradationSpec spec;
  spec.rng_seed = 9;
  const auto a = degrade(img, spec);
  const auto b = degrade(img, spec);
  EXPECT_EQ(a, b);
  spec.rng_seed = 10;
  EXPECT_FALSE(degrade(img, spec) == a);
  for (double v : a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Degrade, InvalidSpecRejected) {
  const ImageBuffer img(4, 4, 3, Range::unit, 0.5);
  DegradationSpec s;
  s.sp_density = 1.5;
  EXPECT_THROW(degrade(img, s), ConfigError);
  s = {};
  s.gaussian_sigma = -0.1;
  EXPECT_THROW(degrade(img, s), ConfigError);
  s = {};
  s.poisson_scale = 0.0;
  EXPECT_THROW(degrade(img, s), ConfigError);
  EXPECT_THROW(degrade(ImageBuffer(4, 4, 3, Range::signed_unit), DegradationSpec{}), ConfigError);
}

TEST(CropPatch, FullExtentReturnsWholeImage) {
  const auto img = procedural_texture(16, 16, 2);
  std::mt19937_64 rng(0);
  EXPECT_EQ(crop_patch(img, 16, rng), img);
  EXPECT_THROW(crop_patch(img, 17, rng), DimensionError);
}

TEST(CropPatch, SameSeedSamePatch) {
  const auto img = procedural_texture(40, 40, 2);
  std::mt19937_64 a(77), b(77);
  EXPECT_EQ(crop_patch(img, 8, a), crop_patch(img, 8, b));
}

TEST(CropPatch, OffsetsAreUniform) {
  const ImageBuffer img(12, 12, 3);
  std::mt19937_64 rng(2024);
  std::vector<double> counts(25, 0.0);  // 5 x 5 valid offsets
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto off = random_patch_offset(img, 8, rng);
    counts[off.top * 5 + off.left] += 1.0;
  }
  const double expected = draws / 25.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(24);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(Hflip, ReversesColumnsAndIsInvolution) {
  ImageBuffer row(1, 2, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    row.at(0, 0, c) = 0.1;
    row.at(0, 1, c) = 0.9;
  }
  const auto f = hflip(row);
  EXPECT_EQ(f.at(0, 0, 0), 0.9);
  EXPECT_EQ(f.at(0, 1, 0), 0.1);
  const auto img = procedural_texture(9, 13, 4);
  EXPECT_EQ(hflip(hflip(img)), img);
  ImageBuffer sym(3, 4, 3, Range::unit, 0.25);
  EXPECT_EQ(hflip(sym), sym);
}

TEST(RescaleRange, AffineMapsAndRoundTrip) {
  ImageBuffer mid(1, 1, 3, Range::unit, 0.5);
  EXPECT_NEAR(rescale_range(mid, Range::signed_unit).at(0, 0, 0), 0.0, 1e-15);
  ImageBuffer zero(1, 1, 3, Range::byte, 0.0);
  EXPECT_EQ(rescale_range(zero, Range::unit).at(0, 0, 0), 0.0);
  const auto img = procedural_texture(20, 20, 6);
  const auto back = rescale_range(rescale_range(img, Range::signed_unit), Range::unit);
  EXPECT_EQ(back.range(), Range::unit);
  double worst = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(img.values()[i] - back.values()[i]));
  EXPECT_LT(worst, 1e-6);
}

TEST(Png, RoundTripOfQuantizedImage) {
  const auto dir = std::filesystem::temp_directory_path() / "rcagan_png_test";
  std::filesystem::create_directories(dir);
  const auto img = quantized(procedural_texture(10, 14, 7));
  write_png(dir / "a.png", img);
  const auto back = read_png(dir / "a.png");
  ASSERT_TRUE(back.same_extent(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 1e-12);
  // Signed images are mapped back to bytes on write.
  write_png(dir / "b.png", rescale_range(img, Range::signed_unit));
  const auto back2 = read_png(dir / "b.png");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back2.values()[i], img.values()[i], 1e-12);
  EXPECT_THROW(read_png(dir / "missing.png"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(TensorConversion, LayoutRoundTrip) {
  const auto a = procedural_texture(5, 7, 1), b = procedural_texture(5, 7, 2);
  const std::vector<ImageBuffer> batch{a, b};
  const auto t = to_tensor<double>(std::span<const ImageBuffer>(batch));
  ASSERT_EQ(t.shape(), (Shape{2, 3, 5, 7}));
  EXPECT_EQ(t.at(1, 2, 4, 6), b.at(4, 6, 2));
  EXPECT_EQ(from_tensor(t, 0, Range::unit), a);
}

TEST(TextureDataset, DeterministicAndPaired) {
  const auto set1 = make_texture_dataset(3, 32, 1, DegradationSpec{});
  const auto set2 = make_texture_dataset(3, 32, 1, DegradationSpec{});
  ASSERT_EQ(set1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set1[i].hr, set2[i].hr);
    EXPECT_EQ(set1[i].lr, set2[i].lr);
    EXPECT_EQ(set1[i].lr.height(), 8u);
  }
  EXPECT_FALSE(set1[0].hr == set1[1].hr);
}

}  // namespace
}  // namespace rcagan
