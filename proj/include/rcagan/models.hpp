#pragma once

// Generators (RN, RCA1, RCA2) and the discriminator, built from tensor ops.
//
// Generator: shallow 3x3 conv + ReLU -> N blocks -> long skip (+ shallow
// features) -> two stride-2 transposed convs -> [RCA2: extra 3x3 conv] ->
// 3x3 reconstruction conv -> tanh.
//
// Discriminator: 3x3 conv + LReLU(0.2), then four 4x4 stride-2 convs each
// followed by BN + LReLU(0.2) with channels b, b, 2b, 4b, flatten, dense -> 1,
// sigmoid. In conditional mode the input is the candidate concatenated with
// the bicubic-upsampled LR image (6 channels).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/image.hpp"
#include "rcagan/layers.hpp"
#include "rcagan/ops.hpp"
#include "rcagan/resample.hpp"
#include "rcagan/tensor.hpp"

namespace rcagan {

enum class Architecture { RN, RCA1, RCA2, DISC };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::RN: return "RN";
    case Architecture::RCA1: return "RCA1";
    case Architecture::RCA2: return "RCA2";
    case Architecture::DISC: return "DISC";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "RN" || s == "rn") return Architecture::RN;
  if (s == "RCA1" || s == "rca1") return Architecture::RCA1;
  if (s == "RCA2" || s == "rca2") return Architecture::RCA2;
  if (s == "DISC" || s == "disc") return Architecture::DISC;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct GeneratorConfig {
  Architecture arch = Architecture::RCA1;
  std::size_t channels = 128;
  std::size_t blocks = 16;
  std::size_t reduction = 16;  // channel-attention bottleneck: channels / reduction

  std::size_t attention_hidden() const { return std::max<std::size_t>(1, channels / reduction); }
};

struct DiscriminatorConfig {
  std::size_t base_channels = 64;
  std::size_t hr_patch = 64;  // sizes the dense layer unless global_pool
  bool conditional = true;
  bool global_pool = false;
};

enum class LayerKind { conv, conv_transposed, dense, batch_norm };

struct LayerSpec {
  std::string name;
  LayerKind kind;
  std::size_t in = 0, out = 0, kernel = 0, pad = 0, stride = 1;
  std::optional<Activation> activation;
  double init_gain = 1.0;  // multiplies the He standard deviation

  double fan_in() const {
    switch (kind) {
      case LayerKind::conv: return static_cast<double>(in * kernel * kernel);
      case LayerKind::conv_transposed: return static_cast<double>(in * kernel * kernel) / static_cast<double>(stride * stride);
      case LayerKind::dense: return static_cast<double>(in);
      case LayerKind::batch_norm: return 1.0;
    }
    return 1.0;
  }
};

using LayerPlan = std::vector<LayerSpec>;

inline std::string block_prefix(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "blocks.%02zu", i);
  return buf;
}

inline LayerPlan generator_plan(const GeneratorConfig& cfg) {
  if (cfg.arch == Architecture::DISC) throw ConfigError("generator_plan: DISC is not a generator");
  const std::size_t c = cfg.channels;
  LayerPlan plan;
  plan.push_back({"shallow", LayerKind::conv, 3, c, 3, 1, 1, Activation::relu()});
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto p = block_prefix(b);
    plan.push_back({p + ".conv1", LayerKind::conv, c, c, 3, 1, 1, Activation::relu()});
    plan.push_back({p + ".conv2", LayerKind::conv, c, c, 3, 1, 1, std::nullopt, cfg.arch == Architecture::RN ? 0.1 : 1.0});
    if (cfg.arch != Architecture::RN) {
      const std::size_t r = cfg.attention_hidden();
      plan.push_back({p + ".ca.fc1", LayerKind::dense, c, r, 0, 0, 1, Activation::relu()});
      plan.push_back({p + ".ca.fc2", LayerKind::dense, r, c, 0, 0, 1, Activation::sigmoid()});
      plan.push_back({p + ".ca.fuse", LayerKind::conv, 2 * c, c, 3, 1, 1, std::nullopt, 0.1});
    }
  }
  plan.push_back({"up1", LayerKind::conv_transposed, c, c, 3, 1, 2, Activation::relu()});
  plan.push_back({"up2", LayerKind::conv_transposed, c, c, 3, 1, 2, Activation::relu()});
  if (cfg.arch == Architecture::RCA2) plan.push_back({"refine", LayerKind::conv, c, c, 3, 1, 1, Activation::relu()});
  plan.push_back({"recon", LayerKind::conv, c, 3, 3, 1, 1, Activation::tanh(), 0.1});
  return plan;
}

inline LayerPlan discriminator_plan(const DiscriminatorConfig& cfg) {
  const std::size_t b = cfg.base_channels;
  if (!cfg.global_pool && cfg.hr_patch % 16 != 0) {
    throw ConfigError("discriminator: hr_patch must be divisible by 16 (got " + std::to_string(cfg.hr_patch) + ")");
  }
  const auto lrelu = Activation::leaky_relu(0.2);
  LayerPlan plan;
  plan.push_back({"conv1", LayerKind::conv, cfg.conditional ? 6u : 3u, b, 3, 1, 1, lrelu});
  const std::size_t chans[] = {b, b, b, 2 * b, 4 * b};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto n = std::to_string(i + 2);
    plan.push_back({"conv" + n, LayerKind::conv, chans[i], chans[i + 1], 4, 1, 2, std::nullopt});
    plan.push_back({"bn" + n, LayerKind::batch_norm, chans[i + 1], chans[i + 1], 0, 0, 1, lrelu});
  }
  const std::size_t side = cfg.hr_patch / 16;
  const std::size_t flat = cfg.global_pool ? 4 * b : 4 * b * side * side;
  plan.push_back({"dense", LayerKind::dense, flat, 1, 0, 0, 1, Activation::sigmoid()});
  return plan;
}

// Named, ordered parameter tensors of one network. Non-trainable entries
// (batch-norm running statistics) are persisted but never optimized.
template <typename T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  ModelParams() = default;
  explicit ModelParams(Architecture arch) : arch_(arch) {}

  Architecture architecture() const noexcept { return arch_; }

  void add(std::string name, Tensor<T> tensor, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    if (trainable) tensor.set_requires_grad(true);
    entries_.push_back({std::move(name), std::move(tensor), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ConfigError("model " + to_string(arch_) + " has no parameter '" + name + "'");
    }
    return entries_[it->second].tensor;
  }
  Tensor<T>& get(const std::string& name) { return const_cast<Tensor<T>&>(std::as_const(*this).get(name)); }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Deep copy; the copy's tensors are independent leaves.
  ModelParams clone() const {
    ModelParams out(arch_);
    for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.trainable);
    return out;
  }

 private:
  Architecture arch_ = Architecture::RN;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// He fan-in normal weights (times init_gain), zero biases, BN scale 1 / shift 0, running stats (0, 1).
template <typename T>
ModelParams<T> init_params(const LayerPlan& plan, Architecture arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams<T> params(arch);
  auto normal = [&](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  for (const auto& layer : plan) {
    const double sd = layer.init_gain * std::sqrt(2.0 / layer.fan_in());
    switch (layer.kind) {
      case LayerKind::conv:
        params.add(layer.name + ".weight", normal({layer.out, layer.in, layer.kernel, layer.kernel}, sd));
        params.add(layer.name + ".bias", Tensor<T>(Shape{layer.out}));
        break;
      case LayerKind::conv_transposed:
        params.add(layer.name + ".weight", normal({layer.in, layer.out, layer.kernel, layer.kernel}, sd));
        params.add(layer.name + ".bias", Tensor<T>(Shape{layer.out}));
        break;
      case LayerKind::dense:
        params.add(layer.name + ".weight", normal({layer.in, layer.out}, sd));
        params.add(layer.name + ".bias", Tensor<T>(Shape{layer.out}));
        break;
      case LayerKind::batch_norm:
        params.add(layer.name + ".scale", Tensor<T>(Shape{layer.out}, T(1)));
        params.add(layer.name + ".shift", Tensor<T>(Shape{layer.out}));
        params.add(layer.name + ".running_mean", Tensor<T>(Shape{layer.out}), false);
        params.add(layer.name + ".running_var", Tensor<T>(Shape{layer.out}, T(1)), false);
        break;
    }
  }
  return params;
}

template <typename T>
ModelParams<T> init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  return init_params<T>(generator_plan(cfg), cfg.arch, seed);
}

template <typename T>
ModelParams<T> init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  return init_params<T>(discriminator_plan(cfg), Architecture::DISC, seed);
}

namespace detail {

template <typename T>
Tensor<T> conv_layer(const Tensor<T>& x, const ModelParams<T>& p, const std::string& name, std::size_t pad,
                     std::size_t stride) {
  return conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), pad, stride);
}

template <typename T>
void require_channels(const Tensor<T>& x, std::size_t expected, const char* op) {
  if (x.rank() != 4) throw DimensionError(op, "rank", 4, x.rank());
  if (x.dim(1) != expected) throw DimensionError(op, "C", expected, x.dim(1));
}

}  // namespace detail

// x + conv2(relu(conv1(x)))
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix) {
  detail::require_channels(x, params.get(prefix + ".conv1.weight").dim(1), "residual_block");
  auto h = relu(detail::conv_layer(x, params, prefix + ".conv1", 1, 1));
  return add(x, detail::conv_layer(h, params, prefix + ".conv2", 1, 1));
}

// Per-channel factors sigmoid(fc2(relu(fc1(GAP(x))))) shaped N x C x 1 x 1.
template <typename T>
Tensor<T> channel_attention_scales(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix) {
  const std::size_t c = params.get(prefix + ".fc1.weight").dim(0);
  detail::require_channels(x, c, "channel_attention");
  const std::size_t n = x.dim(0);
  auto desc = reshape(global_avg_pool(x), Shape{n, c});
  auto hidden = relu(dense(desc, params.get(prefix + ".fc1.weight"), params.get(prefix + ".fc1.bias")));
  auto s = sigmoid(dense(hidden, params.get(prefix + ".fc2.weight"), params.get(prefix + ".fc2.bias")));
  return reshape(s, Shape{n, c, 1, 1});
}

// conv3x3(concat(x, s * x)), 2C -> C channels.
template <typename T>
Tensor<T> channel_attention_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix) {
  auto scaled = mul(x, channel_attention_scales(x, params, prefix));
  return detail::conv_layer(concat_channels(x, scaled), params, prefix + ".fuse", 1, 1);
}

// x + CA(conv2(relu(conv1(x))))
template <typename T>
Tensor<T> rca_block_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix) {
  detail::require_channels(x, params.get(prefix + ".conv1.weight").dim(1), "rca_block");
  auto h = relu(detail::conv_layer(x, params, prefix + ".conv1", 1, 1));
  auto body = detail::conv_layer(h, params, prefix + ".conv2", 1, 1);
  return add(x, channel_attention_forward(body, params, prefix + ".ca"));
}

template <typename T>
std::size_t count_blocks(const ModelParams<T>& params) {
  std::size_t n = 0;
  while (params.contains(block_prefix(n) + ".conv1.weight")) ++n;
  return n;
}

// Recovers the generator configuration from parameter names and shapes.
template <typename T>
GeneratorConfig infer_generator_config(const ModelParams<T>& params) {
  GeneratorConfig cfg;
  cfg.arch = params.architecture();
  cfg.channels = params.get("shallow.weight").dim(0);
  cfg.blocks = count_blocks(params);
  if (cfg.arch != Architecture::RN && cfg.blocks > 0) {
    const std::size_t hidden = params.get(block_prefix(0) + ".ca.fc1.weight").dim(1);
    cfg.reduction = std::max<std::size_t>(1, cfg.channels / hidden);
  }
  return cfg;
}

// N x 3 x H x W in (0,1) -> N x 3 x 4H x 4W in (-1,1).
template <typename T>
Tensor<T> generator_forward(const Tensor<T>& lr, const ModelParams<T>& params, Architecture tag) {
  if (tag == Architecture::DISC) throw ConfigError("generator_forward: DISC is not a generator tag");
  if (tag != params.architecture()) {
    throw ConfigError("generator_forward: tag " + to_string(tag) + " does not match parameters of " +
                      to_string(params.architecture()));
  }
  detail::require_channels(lr, 3, "generator");
  const bool attention = tag != Architecture::RN;
  if (attention != params.contains(block_prefix(0) + ".ca.fc1.weight") && count_blocks(params) > 0) {
    throw ConfigError("generator_forward: parameters do not match the " + to_string(tag) + " layer plan");
  }
  if ((tag == Architecture::RCA2) != params.contains("refine.weight")) {
    throw ConfigError("generator_forward: parameters do not match the " + to_string(tag) + " layer plan");
  }
  auto shallow = relu(detail::conv_layer(lr, params, "shallow", 1, 1));
  auto x = shallow;
  const std::size_t blocks = count_blocks(params);
  for (std::size_t b = 0; b < blocks; ++b) {
    x = attention ? rca_block_forward(x, params, block_prefix(b)) : residual_block_forward(x, params, block_prefix(b));
  }
  x = add(x, shallow);
  x = relu(conv2d_transposed(x, params.get("up1.weight"), params.get("up1.bias"), 2));
  x = relu(conv2d_transposed(x, params.get("up2.weight"), params.get("up2.bias"), 2));
  if (tag == Architecture::RCA2) x = relu(detail::conv_layer(x, params, "refine", 1, 1));
  return activation(detail::conv_layer(x, params, "recon", 1, 1), Activation::tanh());
}

template <typename T>
Tensor<T> generator_forward(const Tensor<T>& lr, const ModelParams<T>& params) {
  return generator_forward(lr, params, params.architecture());
}

// Bicubic x4 upsample of an LR batch, mapped from (0,1) to (-1,1). Not differentiable.
template <typename T>
Tensor<T> discriminator_condition(const Tensor<T>& lr) {
  detail::require_channels(lr, 3, "discriminator_condition");
  std::vector<ImageBuffer> up;
  for (std::size_t i = 0; i < lr.dim(0); ++i) {
    auto img = from_tensor(lr, i, Range::unit);
    clamp_to_range(img);
    up.push_back(rescale_range(bicubic_resample(img, ScaleFactor::up(4)), Range::signed_unit));
  }
  return to_tensor<T>(std::span<const ImageBuffer>(up));
}

// `condition` is the output of discriminator_condition (ignored if the
// discriminator is unconditional). Returns N x 1 probabilities in (0,1).
template <typename T>
Tensor<T> discriminator_forward_conditioned(const Tensor<T>& condition, const Tensor<T>& candidate,
                                            ModelParams<T>& params, BatchNormMode mode) {
  if (params.architecture() != Architecture::DISC) throw ConfigError("discriminator_forward: not DISC parameters");
  detail::require_channels(candidate, 3, "discriminator");
  const bool conditional = params.get("conv1.weight").dim(1) == 6;
  Tensor<T> x = candidate;
  if (conditional) {
    for (std::size_t ax : {0u, 2u, 3u}) {
      if (condition.dim(ax) != candidate.dim(ax)) {
        throw DimensionError("discriminator", ax == 0 ? "N" : (ax == 2 ? "H" : "W"), condition.dim(ax),
                             candidate.dim(ax));
      }
    }
    x = concat_channels(condition, candidate);
  }
  const auto lrelu = Activation::leaky_relu(0.2);
  x = activation(detail::conv_layer(x, params, "conv1", 1, 1), lrelu);
  for (int i = 2; i <= 5; ++i) {
    const auto n = std::to_string(i);
    x = detail::conv_layer(x, params, "conv" + n, 1, 2);
    BatchNormStats<T> stats{params.get("bn" + n + ".running_mean"), params.get("bn" + n + ".running_var"), 0.9, 1e-5};
    x = activation(batch_norm(x, params.get("bn" + n + ".scale"), params.get("bn" + n + ".shift"), mode, stats), lrelu);
  }
  const auto& w = params.get("dense.weight");
  const std::size_t n = x.dim(0);
  if (w.dim(0) == x.dim(1)) {
    x = reshape(global_avg_pool(x), Shape{n, x.dim(1)});
  } else {
    if (w.dim(0) != x.size() / n) throw DimensionError("discriminator", "dense F", w.dim(0), x.size() / n);
    x = reshape(x, Shape{n, x.size() / n});
  }
  return sigmoid(dense(x, w, params.get("dense.bias")));
}

template <typename T>
Tensor<T> discriminator_forward(const Tensor<T>& lr, const Tensor<T>& candidate, ModelParams<T>& params,
                                BatchNormMode mode) {
  detail::require_channels(lr, 3, "discriminator");
  if (candidate.dim(2) != 4 * lr.dim(2)) throw DimensionError("discriminator", "H", 4 * lr.dim(2), candidate.dim(2));
  if (candidate.dim(3) != 4 * lr.dim(3)) throw DimensionError("discriminator", "W", 4 * lr.dim(3), candidate.dim(3));
  const bool conditional = params.get("conv1.weight").dim(1) == 6;
  return discriminator_forward_conditioned(conditional ? discriminator_condition(lr) : Tensor<T>(), candidate, params,
                                           mode);
}

}  // namespace rcagan
