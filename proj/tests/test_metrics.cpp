#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "rcagan/dataset.hpp"
#include "rcagan/inference.hpp"
#include "rcagan/metrics.hpp"

namespace rcagan {
namespace {

namespace fs = std::filesystem;

ImageBuffer random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(h, w, 3, Range::unit);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rcagan_metrics_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Psnr, ClosedFormAndSentinel) {
  ImageBuffer a(8, 8, 3, Range::unit, 0.3), b(8, 8, 3, Range::unit, 0.4);
  EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-9);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_EQ(format_db(psnr(a, a)), "inf");
  EXPECT_THROW(psnr(a, ImageBuffer(8, 9)), DimensionError);
}

TEST(Psnr, SymmetricAndPermutationInvariant) {
  const auto a = random_image(12, 10, 1), b = random_image(12, 10, 2);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  auto pa = a, pb = b;
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pa.values()[i] = a.values()[perm[i]];
    pb.values()[i] = b.values()[perm[i]];
  }
  EXPECT_NEAR(psnr(pa, pb), psnr(a, b), 1e-9);
}

TEST(Psnr, DecreasesWithNoiseLevel) {
  const auto img = procedural_texture(64, 64, 5);
  double previous = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.05, 0.1}) {
    DegradationSpec spec = DegradationSpec::none();
    spec.gaussian = true;
    spec.gaussian_sigma = sigma;
    spec.rng_seed = 9;
    const double p = psnr(degrade(img, spec), img);
    EXPECT_LT(p, previous) << sigma;
    previous = p;
  }
}

TEST(SsimMetric, IdentityBoundsAndSymmetry) {
  const auto a = random_image(32, 32, 4), b = random_image(32, 32, 5);
  EXPECT_EQ(ssim(a, a), 1.0);
  EXPECT_EQ(msssim(a, a), 1.0);
  const double s = ssim(a, b);
  EXPECT_GE(s, -1.0);
  EXPECT_LE(s, 1.0);
  EXPECT_EQ(s, ssim(b, a));
}

TEST(SsimMetric, MatchesDifferentiablePath) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_image(40, 36, 10 + seed), b = random_image(40, 36, 20 + seed);
    const auto ta = to_tensor<double>(a), tb = to_tensor<double>(b);
    EXPECT_NEAR(ssim(a, b), ssim_index(ta, tb).item(), 1e-12);
    EXPECT_NEAR(msssim(a, b), msssim_index(ta, tb).item(), 1e-12);
  }
}

TEST(SsimMetric, SignedImagesAreRemappedFirst) {
  const auto a = random_image(24, 24, 6), b = random_image(24, 24, 7);
  EXPECT_NEAR(ssim(rescale_range(a, Range::signed_unit), rescale_range(b, Range::signed_unit)), ssim(a, b), 1e-12);
}

TEST(EvalReport, EmptyDatasetHasNoAggregates) {
  EvalReport r;
  EXPECT_EQ(r.count(), 0u);
  EXPECT_FALSE(r.aggregate().has_value());
  EXPECT_NE(r.table().find("count 0"), std::string::npos);
}

TEST(EvalReport, AggregatesAreMeansAndInfIsExcluded) {
  EvalReport r;
  r.rows = {{"a", 20.0, 0.5, 0.6}, {"b", 30.0, 0.7, 0.8}, {"c", std::numeric_limits<double>::infinity(), 1.0, 1.0}};
  const auto a = r.aggregate();
  ASSERT_TRUE(a);
  EXPECT_DOUBLE_EQ(a->psnr, 25.0);
  EXPECT_EQ(a->psnr_count, 2u);
  EXPECT_DOUBLE_EQ(a->ssim, (0.5 + 0.7 + 1.0) / 3.0);
  EXPECT_EQ(r.infinite_psnr_count(), 1u);
  EXPECT_NE(r.key_values().find("image.c.psnr=inf"), std::string::npos);
  EXPECT_NE(r.table().find("inf"), std::string::npos);
}

TEST(EvaluateDataset, BicubicStubMatchesBaselineExactly) {
  const auto pairs = make_texture_dataset(1, 64, 3, DegradationSpec::none());
  const auto report = evaluate_pairs(pairs, bicubic_upsampler());
  const auto up = bicubic_resample(pairs[0].lr, ScaleFactor::up(4));
  ASSERT_EQ(report.count(), 1u);
  EXPECT_EQ(report.rows[0].psnr, psnr(up, pairs[0].hr));
  EXPECT_EQ(report.aggregate()->psnr, report.rows[0].psnr);
}

TEST(EvaluateDataset, MissingPairsAreListedAndEvaluationContinues) {
  const auto lr = fresh_dir("lr"), hr = fresh_dir("hr");
  const auto pairs = make_texture_dataset(3, 48, 4, DegradationSpec::none());
  for (const auto& p : pairs) {
    write_png(lr / p.name, p.lr);
    if (p.name != "tex1.png") write_png(hr / p.name, p.hr);
  }
  std::ofstream(lr / "broken.png") << "not a png";
  std::ofstream(hr / "broken.png") << "not a png";
  const auto report = evaluate_dataset(bicubic_upsampler(), lr, hr);
  EXPECT_EQ(report.count(), 2u);
  ASSERT_EQ(report.missing.size(), 2u);
  const auto joined = report.missing[0] + report.missing[1];
  EXPECT_NE(joined.find("tex1.png"), std::string::npos);
  EXPECT_NE(joined.find("broken.png"), std::string::npos);
}

TEST(EvaluateDirectories, IdenticalDirectoriesGiveInfAndOne) {
  const auto dir = fresh_dir("same");
  for (const auto& p : make_texture_dataset(2, 32, 8, DegradationSpec::none())) write_png(dir / p.name, p.hr);
  const auto report = evaluate_directories(dir, dir);
  ASSERT_EQ(report.count(), 2u);
  for (const auto& row : report.rows) {
    EXPECT_TRUE(std::isinf(row.psnr));
    EXPECT_EQ(row.ssim, 1.0);
  }
  report.write(dir / "report");
  EXPECT_TRUE(fs::exists(dir / "report" / "report.txt"));
  EXPECT_TRUE(fs::exists(dir / "report" / "report.kv"));
}

TEST(EvaluatePair, QuantizedModeComparesEightBitImages) {
  const auto a = random_image(16, 16, 30);
  auto b = a;
  for (auto& v : b.values()) v = std::clamp(v + 1e-4, 0.0, 1.0);  // below half an 8-bit step
  EXPECT_FALSE(std::isinf(evaluate_pair("x", b, a).psnr));
  EXPECT_TRUE(std::isinf(evaluate_pair("x", b, a, EvalOptions{true}).psnr) ||
              evaluate_pair("x", b, a, EvalOptions{true}).psnr > 50.0);
}

TEST(Checkerboard, FlatIsZeroAlternatingIsAmplitude) {
  ImageBuffer flat(10, 10, 3, Range::unit, 0.4);
  EXPECT_EQ(checkerboard_energy(flat), 0.0);
  ImageBuffer board(10, 10, 3, Range::unit);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 10; ++x)
      for (std::size_t c = 0; c < 3; ++c) board.at(y, x, c) = (x + y) % 2 ? 0.6 : 0.4;
  EXPECT_NEAR(checkerboard_energy(board), 0.2, 1e-12);
  EXPECT_NEAR(checkerboard_energy(board, 4), 0.2, 1e-12);
  EXPECT_THROW(checkerboard_energy(board, 5), DimensionError);
}

TEST(Checkerboard, MarginExcludesBorderRing) {
  ImageBuffer img(8, 8, 1, Range::unit, 0.5);
  for (std::size_t i = 0; i < 8; ++i) img.at(0, i, 0) = img.at(i, 0, 0) = 0.0;
  EXPECT_GT(checkerboard_energy(img), 0.0);
  EXPECT_EQ(checkerboard_energy(img, 1), 0.0);
}

TEST(Inference, TiledMatchesWholeImageOnInteriors) {
  GeneratorConfig cfg;
  cfg.arch = Architecture::RN;
  cfg.channels = 8;
  cfg.blocks = 2;
  const auto params = init_generator<float>(cfg, 12);
  const auto lr = procedural_texture(40, 36, 2);
  const auto whole = super_resolve(params, lr);
  const auto tiled = super_resolve(params, lr, TileOptions{16, 12});
  ASSERT_TRUE(whole.same_extent(tiled));
  EXPECT_EQ(whole.height(), 160u);
  double diff = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 16; y < whole.height() - 16; ++y)
    for (std::size_t x = 16; x < whole.width() - 16; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        diff += std::abs(whole.at(y, x, c) - tiled.at(y, x, c));
        ++n;
      }
  EXPECT_LT(diff / static_cast<double>(n), 1e-3);
  EXPECT_EQ(super_resolve(params, lr), whole);
}

}  // namespace
}  // namespace rcagan
