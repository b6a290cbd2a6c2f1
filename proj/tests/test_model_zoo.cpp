#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rcagan/models.hpp"
#include "support/gradcheck.hpp"

namespace rcagan {
namespace {

using testing::gradient_relative_error;
using testing::random_tensor;
using testing::weighted_sum;
using Td = Tensor<double>;
using Tf = Tensor<float>;

GeneratorConfig small_config(Architecture arch, std::size_t channels = 8, std::size_t blocks = 2) {
  GeneratorConfig cfg;
  cfg.arch = arch;
  cfg.channels = channels;
  cfg.blocks = blocks;
  cfg.reduction = 4;
  return cfg;
}

// Zeroes every parameter of the residual body so each block reduces to its shortcut.
template <typename T>
void zero_block_bodies(ModelParams<T>& params) {
  for (auto& e : params.entries()) {
    if (e.name.rfind("blocks.", 0) != 0) continue;
    const bool body = e.name.find(".conv2.") != std::string::npos || e.name.find(".ca.fuse.") != std::string::npos;
    if (body)
      for (auto& v : e.tensor.data()) v = T(0);
  }
}

TEST(GeneratorPlan, DefaultLayoutCounts) {
  for (auto arch : {Architecture::RN, Architecture::RCA1, Architecture::RCA2}) {
    GeneratorConfig cfg;
    cfg.arch = arch;
    const auto plan = generator_plan(cfg);
    std::size_t convs = 0, transposed = 0, dense_layers = 0;
    for (const auto& l : plan) {
      convs += l.kind == LayerKind::conv;
      transposed += l.kind == LayerKind::conv_transposed;
      dense_layers += l.kind == LayerKind::dense;
      if (l.kind == LayerKind::conv && l.name != "recon") {
        EXPECT_EQ(l.out, 128u) << l.name;
      }
    }
    const std::size_t per_block = arch == Architecture::RN ? 2 : 3;
    const std::size_t extra = arch == Architecture::RCA2 ? 1 : 0;
    EXPECT_EQ(convs, 1 + 16 * per_block + extra + 1) << to_string(arch);
    EXPECT_EQ(transposed, 2u);
    EXPECT_EQ(dense_layers, arch == Architecture::RN ? 0u : 32u);
    EXPECT_EQ(plan.front().name, "shallow");
    EXPECT_EQ(plan.back().name, "recon");
    EXPECT_EQ(plan.back().out, 3u);
    EXPECT_EQ(plan.back().activation->kind, ActivationKind::tanh);
    if (arch == Architecture::RCA2) {
      EXPECT_EQ(plan[plan.size() - 2].name, "refine");
    }
  }
}

TEST(GeneratorPlan, Rca2HasExactlyOneExtraConv) {
  GeneratorConfig c1, c2;
  c1.arch = Architecture::RCA1;
  c2.arch = Architecture::RCA2;
  const auto p1 = init_generator<float>(c1, 1);
  const auto p2 = init_generator<float>(c2, 1);
  EXPECT_EQ(p2.parameter_count() - p1.parameter_count(), 128u * 128u * 9u + 128u);
}

TEST(DiscriminatorPlan, TenTrainableLayersAndChannelSchedule) {
  const auto plan = discriminator_plan(DiscriminatorConfig{});
  EXPECT_EQ(plan.size(), 10u);
  std::vector<std::size_t> conv_out;
  for (const auto& l : plan)
    if (l.kind == LayerKind::conv) conv_out.push_back(l.out);
  EXPECT_EQ(conv_out, (std::vector<std::size_t>{64, 64, 64, 128, 256}));
  EXPECT_EQ(plan.front().in, 6u);
  EXPECT_EQ(plan.back().kind, LayerKind::dense);
  EXPECT_EQ(plan.back().in, 256u * 4 * 4);
  EXPECT_EQ(plan.back().activation->kind, ActivationKind::sigmoid);
}

TEST(DiscriminatorPlan, UnconditionalAndPooledVariants) {
  DiscriminatorConfig cfg;
  cfg.conditional = false;
  cfg.global_pool = true;
  cfg.hr_patch = 40;
  const auto plan = discriminator_plan(cfg);
  EXPECT_EQ(plan.front().in, 3u);
  EXPECT_EQ(plan.back().in, 256u);
  cfg.global_pool = false;
  EXPECT_THROW(discriminator_plan(cfg), ConfigError);
}

TEST(InitParams, SameSeedIsBitwiseIdentical) {
  const auto cfg = small_config(Architecture::RCA2);
  const auto a = init_generator<float>(cfg, 42);
  const auto b = init_generator<float>(cfg, 42);
  const auto c = init_generator<float>(cfg, 43);
  ASSERT_EQ(a.entries().size(), b.entries().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    EXPECT_EQ(a.entries()[i].name, b.entries()[i].name);
    EXPECT_EQ(a.entries()[i].tensor.values(), b.entries()[i].tensor.values());
    any_diff = any_diff || a.entries()[i].tensor.values() != c.entries()[i].tensor.values();
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitParams, HeVarianceAndZeroBiases) {
  GeneratorConfig cfg;  // full width: 128 x 128 x 3 x 3 layers
  cfg.arch = Architecture::RCA1;
  cfg.blocks = 1;
  const auto params = init_generator<float>(cfg, 7);
  const auto plan = generator_plan(cfg);
  for (const auto& layer : plan) {
    const auto& w = params.get(layer.name + ".weight");
    if (w.size() >= 10000) {
      double s = 0.0, s2 = 0.0;
      for (float v : w.data()) {
        s += v;
        s2 += static_cast<double>(v) * v;
      }
      const double n = static_cast<double>(w.size());
      const double var = s2 / n - (s / n) * (s / n);
      const double expected = layer.init_gain * layer.init_gain * 2.0 / layer.fan_in();
      EXPECT_NEAR(var / expected, 1.0, 0.1) << layer.name;
    }
    for (float v : params.get(layer.name + ".bias").data()) ASSERT_EQ(v, 0.0f) << layer.name;
  }
  const auto d = init_discriminator<float>(DiscriminatorConfig{}, 7);
  for (float v : d.get("bn3.scale").data()) EXPECT_EQ(v, 1.0f);
  for (float v : d.get("bn3.shift").data()) EXPECT_EQ(v, 0.0f);
}

TEST(InitParams, ResidualOutputsAndReconstructionStartSmall) {
  for (auto arch : {Architecture::RN, Architecture::RCA1, Architecture::RCA2}) {
    for (const auto& layer : generator_plan(small_config(arch))) {
      const bool branch_end = layer.name.ends_with(arch == Architecture::RN ? ".conv2" : ".ca.fuse");
      EXPECT_EQ(layer.init_gain, branch_end || layer.name == "recon" ? 0.1 : 1.0) << layer.name;
    }
  }
}

TEST(InitParams, NamesAreUnique) {
  ModelParams<float> p(Architecture::RN);
  p.add("a", Tf(Shape{1}));
  EXPECT_THROW(p.add("a", Tf(Shape{1})), ConfigError);
  EXPECT_THROW(p.get("b"), ConfigError);
}

TEST(Generator, FourTimesShapeContractAndTanhRange) {
  std::mt19937_64 rng(3);
  for (auto arch : {Architecture::RN, Architecture::RCA1, Architecture::RCA2}) {
    const auto params = init_generator<float>(small_config(arch, 4, 1), 11);
    for (std::size_t h : {8u, 16u, 24u, 32u})
      for (std::size_t w : {8u, 16u, 24u, 32u}) {
        NoGradGuard guard;
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        Tf lr(Shape{1, 3, h, w});
        for (auto& v : lr.data()) v = u(rng);
        const auto out = generator_forward(lr, params, arch);
        ASSERT_EQ(out.shape(), (Shape{1, 3, 4 * h, 4 * w}));
      }
  }
}

TEST(Generator, OutputStrictlyInsideSignedUnitRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto params = init_generator<float>(small_config(Architecture::RCA1, 4, 1), 100 + trial);
    // Large recon weights push the tanh towards saturation.
    for (auto& v : params.get("recon.weight").data()) v *= 50.0f;
    NoGradGuard guard;
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Tf lr(Shape{1, 3, 8, 8});
    for (auto& v : lr.data()) v = u(rng);
    const auto out = generator_forward(lr, params);
    for (float v : out.data()) {
      ASSERT_GT(v, -1.0f);
      ASSERT_LT(v, 1.0f);
    }
  }
}

TEST(Generator, WrongTagIsRejected) {
  const auto rn = init_generator<float>(small_config(Architecture::RN), 1);
  Tf lr(Shape{1, 3, 8, 8}, 0.5f);
  EXPECT_THROW(generator_forward(lr, rn, Architecture::RCA1), ConfigError);
  EXPECT_THROW(generator_forward(lr, rn, Architecture::DISC), ConfigError);
  auto forged = ModelParams<float>(Architecture::RCA2);
  const auto rca1 = init_generator<float>(small_config(Architecture::RCA1), 1);
  for (const auto& e : rca1.entries()) forged.add(e.name, e.tensor);
  EXPECT_THROW(generator_forward(lr, forged), ConfigError);
  EXPECT_THROW(generator_forward(Tf(Shape{1, 4, 8, 8}), rn), DimensionError);
}

TEST(Generator, InferConfigRoundTrip) {
  const auto cfg = small_config(Architecture::RCA2, 8, 3);
  const auto got = infer_generator_config(init_generator<float>(cfg, 1));
  EXPECT_EQ(got.arch, cfg.arch);
  EXPECT_EQ(got.channels, 8u);
  EXPECT_EQ(got.blocks, 3u);
  EXPECT_EQ(got.reduction, 4u);
}

TEST(ResidualBlock, ZeroWeightsAreIdentityWithUnitGradient) {
  auto params = init_generator<double>(small_config(Architecture::RN, 8, 1), 2);
  for (auto& e : params.entries())
    if (e.name.rfind("blocks.00.", 0) == 0)
      for (auto& v : e.tensor.data()) v = 0.0;
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 8, 6, 6}, rng).set_requires_grad(true);
  const auto y = residual_block_forward(x, params, "blocks.00");
  EXPECT_EQ(y.values(), x.values());
  backward(sum(y));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_THROW(residual_block_forward(Td(Shape{1, 4, 6, 6}), params, "blocks.00"), DimensionError);
}

TEST(ResidualBlock, FullWidthShapePreserved) {
  GeneratorConfig cfg;
  cfg.arch = Architecture::RN;
  cfg.blocks = 1;
  const auto params = init_generator<float>(cfg, 1);
  NoGradGuard guard;
  const auto y = residual_block_forward(Tf(Shape{1, 128, 8, 8}, 0.1f), params, "blocks.00");
  EXPECT_EQ(y.shape(), (Shape{1, 128, 8, 8}));
}

TEST(ZeroBodyStack, SixteenBlocksComposeToIdentity) {
  for (auto arch : {Architecture::RN, Architecture::RCA1}) {
    auto params = init_generator<double>(small_config(arch, 8, 16), 9);
    zero_block_bodies(params);
    std::mt19937_64 rng(2);
    auto x = random_tensor({1, 8, 5, 7}, rng);
    Td y = x;
    for (std::size_t b = 0; b < 16; ++b) {
      y = arch == Architecture::RN ? residual_block_forward(y, params, block_prefix(b))
                                   : rca_block_forward(y, params, block_prefix(b));
    }
    EXPECT_EQ(y.values(), x.values()) << to_string(arch);
  }
}

TEST(ChannelAttention, ZeroPreActivationGivesHalfScaling) {
  auto params = init_generator<double>(small_config(Architecture::RCA1, 8, 1), 4);
  for (const char* n : {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"})
    for (auto& v : params.get(std::string("blocks.00.ca.") + n).data()) v = 0.0;
  std::mt19937_64 rng(8);
  const auto x = random_tensor({2, 8, 4, 4}, rng);
  const auto s = channel_attention_scales(x, params, "blocks.00.ca");
  EXPECT_EQ(s.shape(), (Shape{2, 8, 1, 1}));
  for (double v : s.data()) EXPECT_EQ(v, 0.5);

  // Fuse weights that pick only the scaled half of the concat reproduce 0.5 * x.
  auto fuse = params.get("blocks.00.ca.fuse.weight").data();
  std::fill(fuse.begin(), fuse.end(), 0.0);
  for (std::size_t c = 0; c < 8; ++c) fuse[((c * 16 + 8 + c) * 3 + 1) * 3 + 1] = 1.0;
  const auto out = channel_attention_forward(x, params, "blocks.00.ca");
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], 0.5 * x.data()[i]);
}

TEST(ChannelAttention, ScalesStrictlyInsideUnitIntervalAndShapeKept) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto params = init_generator<float>(small_config(Architecture::RCA1, 16, 1), 1000 + trial);
    std::uniform_int_distribution<std::size_t> ext(1, 9);
    const std::size_t h = ext(rng), w = ext(rng);
    Tf x(Shape{2, 16, h, w});
    std::normal_distribution<float> nd(0.0f, 3.0f);
    for (auto& v : x.data()) v = nd(rng);
    NoGradGuard guard;
    const auto s = channel_attention_scales(x, params, "blocks.00.ca");
    for (float v : s.data()) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
    EXPECT_EQ(channel_attention_forward(x, params, "blocks.00.ca").shape(), x.shape());
  }
}

TEST(ChannelAttention, FullWidthRcaBlockShape) {
  GeneratorConfig cfg;
  cfg.blocks = 1;
  const auto params = init_generator<float>(cfg, 1);
  NoGradGuard guard;
  EXPECT_EQ(rca_block_forward(Tf(Shape{1, 128, 6, 6}, 0.3f), params, "blocks.00").shape(), (Shape{1, 128, 6, 6}));
  EXPECT_THROW(channel_attention_forward(Tf(Shape{1, 64, 6, 6}), params, "blocks.00.ca"), DimensionError);
}

TEST(ChannelAttention, ZeroBodyAndFuseIsIdentity) {
  auto params = init_generator<double>(small_config(Architecture::RCA1, 8, 1), 4);
  zero_block_bodies(params);
  std::mt19937_64 rng(3);
  const auto x = random_tensor({1, 8, 6, 6}, rng);
  EXPECT_EQ(rca_block_forward(x, params, "blocks.00").values(), x.values());
}

TEST(Gradients, RcaBlockMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto params = init_generator<double>(small_config(Architecture::RCA1, 4, 1), seed);
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 4, 4, 4}, rng);
    const auto w = random_tensor({2, 4, 4, 4}, rng);
    std::vector<Td> wrt{x};
    for (auto& e : params.entries())
      if (e.name.rfind("blocks.00.", 0) == 0) wrt.push_back(e.tensor);
    const double err =
        gradient_relative_error([&] { return weighted_sum(rca_block_forward(x, params, "blocks.00"), w); }, wrt);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

TEST(Gradients, WholeGeneratorMatchesFiniteDifferences) {
  for (auto arch : {Architecture::RN, Architecture::RCA2}) {
    auto params = init_generator<double>(small_config(arch, 4, 2), 21);
    std::mt19937_64 rng(4);
    // Zero biases put whole regions exactly on the ReLU kink; move them off it.
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (auto& e : params.entries())
      if (e.name.ends_with(".bias"))
        for (auto& v : e.tensor.data()) v = jitter(rng);
    auto lr = random_tensor({1, 3, 3, 3}, rng, 0.0, 1.0);
    const auto w = random_tensor({1, 3, 12, 12}, rng);
    std::vector<Td> wrt{lr};
    for (auto& e : params.entries()) wrt.push_back(e.tensor);
    const double err = gradient_relative_error([&] { return weighted_sum(generator_forward(lr, params), w); }, wrt);
    EXPECT_LT(err, 1e-3) << to_string(arch);
  }
}

TEST(Discriminator, OutputsOneProbabilityPerItem) {
  DiscriminatorConfig cfg;
  cfg.base_channels = 8;
  cfg.hr_patch = 32;
  auto params = init_discriminator<float>(cfg, 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tf lr(Shape{2, 3, 8, 8}), hr(Shape{2, 3, 32, 32});
  for (auto& v : lr.data()) v = u(rng);
  for (auto& v : hr.data()) v = 2.0f * u(rng) - 1.0f;
  const auto p = discriminator_forward(lr, hr, params, BatchNormMode::train);
  ASSERT_EQ(p.shape(), (Shape{2, 1}));
  for (float v : p.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  // Eval mode makes single-image inference valid.
  Tf one_lr(Shape{1, 3, 8, 8}, 0.5f), one_hr(Shape{1, 3, 32, 32}, 0.0f);
  EXPECT_EQ(discriminator_forward(one_lr, one_hr, params, BatchNormMode::eval).shape(), (Shape{1, 1}));
  EXPECT_THROW(discriminator_forward(one_lr, one_hr, params, BatchNormMode::train), std::invalid_argument);
}

TEST(Discriminator, DefaultFlattenExtentIs4096) {
  auto params = init_discriminator<float>(DiscriminatorConfig{}, 3);
  EXPECT_EQ(params.get("dense.weight").shape(), (Shape{4096, 1}));
  NoGradGuard guard;
  Tf lr(Shape{2, 3, 16, 16}, 0.4f), hr(Shape{2, 3, 64, 64}, 0.1f);
  EXPECT_EQ(discriminator_forward(lr, hr, params, BatchNormMode::train).shape(), (Shape{2, 1}));
}

TEST(Discriminator, ExtentMismatchesAreDimensionErrors) {
  DiscriminatorConfig cfg;
  cfg.base_channels = 4;
  cfg.hr_patch = 32;
  auto params = init_discriminator<float>(cfg, 3);
  NoGradGuard guard;
  EXPECT_THROW(discriminator_forward(Tf(Shape{2, 3, 8, 8}), Tf(Shape{2, 3, 36, 32}), params, BatchNormMode::eval),
               DimensionError);
  // A 4x-consistent pair that does not match the configured dense size.
  EXPECT_THROW(discriminator_forward(Tf(Shape{2, 3, 16, 16}), Tf(Shape{2, 3, 64, 64}), params, BatchNormMode::eval),
               DimensionError);
}

TEST(Discriminator, GlobalPoolAcceptsAnyExtentAndUnconditional) {
  DiscriminatorConfig cfg;
  cfg.base_channels = 4;
  cfg.global_pool = true;
  cfg.conditional = false;
  auto params = init_discriminator<float>(cfg, 3);
  NoGradGuard guard;
  for (std::size_t s : {16u, 48u}) {
    const auto p = discriminator_forward(Tf(Shape{2, 3, s / 4, s / 4}), Tf(Shape{2, 3, s, s}, 0.2f), params,
                                         BatchNormMode::train);
    EXPECT_EQ(p.shape(), (Shape{2, 1}));
  }
}

TEST(Discriminator, RunningStatsUpdateOnlyInTrainMode) {
  DiscriminatorConfig cfg;
  cfg.base_channels = 4;
  cfg.hr_patch = 16;
  auto params = init_discriminator<float>(cfg, 3);
  const auto before = params.get("bn2.running_mean").values();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tf lr(Shape{2, 3, 4, 4}), hr(Shape{2, 3, 16, 16});
  for (auto& v : lr.data()) v = 0.5f + 0.5f * u(rng);
  for (auto& v : hr.data()) v = u(rng);
  NoGradGuard guard;
  discriminator_forward(lr, hr, params, BatchNormMode::eval);
  EXPECT_EQ(params.get("bn2.running_mean").values(), before);
  discriminator_forward(lr, hr, params, BatchNormMode::train);
  EXPECT_NE(params.get("bn2.running_mean").values(), before);
  EXPECT_FALSE(params.get("bn2.running_mean").requires_grad());
  EXPECT_TRUE(params.get("bn2.scale").requires_grad());
}

TEST(Gradients, DiscriminatorMatchesFiniteDifferences) {
  DiscriminatorConfig cfg;
  cfg.base_channels = 2;
  cfg.hr_patch = 32;
  auto params = init_discriminator<double>(cfg, 5);
  std::mt19937_64 rng(6);
  const auto cond = random_tensor({2, 3, 32, 32}, rng);
  auto hr = random_tensor({2, 3, 32, 32}, rng);
  std::vector<Td> wrt{hr};
  for (auto& e : params.entries())
    if (e.trainable) wrt.push_back(e.tensor);
  const double err = gradient_relative_error(
      [&] { return sum(log(discriminator_forward_conditioned(cond, hr, params, BatchNormMode::train))); }, wrt);
  EXPECT_LT(err, 1e-3);
}

}  // namespace
}  // namespace rcagan
