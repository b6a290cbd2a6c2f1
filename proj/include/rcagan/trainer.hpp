#pragma once

// Alternating GAN training: per iteration one (or d_steps) discriminator
// update on real/fake tuples, then one generator update on the composite loss.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rcagan/checkpoint.hpp"
#include "rcagan/config.hpp"
#include "rcagan/dataset.hpp"
#include "rcagan/losses.hpp"
#include "rcagan/models.hpp"
#include "rcagan/optim.hpp"

namespace rcagan {

// splitmix64 finalizer over a combined key; used to derive independent streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct IterationLog {
  std::size_t iter = 0;
  double g_total = 0.0;
  TermReport terms;
  double d_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;

  std::string line(bool with_wall = true) const {
    std::ostringstream os;
    os.precision(9);
    os << "iter=" << iter << " g_total=" << g_total << " " << terms.to_kv() << " d_loss=" << d_loss;
    if (with_wall) os << " wall_ms=" << std::llround(wall_ms);
    return os.str();
  }
};

struct TrainingState {
  Variant variant = Variant::RCA1;
  std::size_t iteration = 0;
  ModelParams<float> g;
  std::optional<ModelParams<float>> d;
  AdamState<float> g_opt;
  std::optional<AdamState<float>> d_opt;
};

inline DiscriminatorConfig effective_discriminator(const TrainConfig& cfg) {
  auto d = cfg.discriminator;
  d.hr_patch = 4 * cfg.lr_patch;
  return d;
}

inline TrainingState init_training_state(const TrainConfig& cfg) {
  TrainingState s;
  s.variant = cfg.variant;
  auto gcfg = cfg.generator;
  gcfg.arch = generator_architecture(cfg.variant);
  s.g = init_generator<float>(gcfg, mix_seed(cfg.seed, 1));
  s.g_opt = AdamState<float>(s.g, cfg.adam);
  if (cfg.uses_discriminator()) {
    s.d = init_discriminator<float>(effective_discriminator(cfg), mix_seed(cfg.seed, 2));
    s.d_opt = AdamState<float>(*s.d, cfg.adam);
  }
  return s;
}

// ---- checkpoint encoding of the full training state -------------------------
// Metadata travels as tensors: "meta/variant/<name>" (one element) and
// "meta/iteration" (value stored as f32, exact below 2^24).

namespace detail {

inline void append_adam(CheckpointData& out, const AdamState<float>& st, const std::string& prefix) {
  out.push_back({prefix + "step", Shape{1}, {static_cast<float>(st.step)}});
  for (std::size_t i = 0; i < st.names.size(); ++i) {
    out.push_back({prefix + "m/" + st.names[i], Shape{st.m[i].size()}, st.m[i]});
    out.push_back({prefix + "v/" + st.names[i], Shape{st.v[i].size()}, st.v[i]});
  }
}

inline void restore_adam(AdamState<float>& st, const CheckpointData& data, const std::string& prefix) {
  const auto* step = find_tensor(data, prefix + "step");
  if (!step || step->values.size() != 1) throw CheckpointError("checkpoint has no tensor '" + prefix + "step'");
  st.step = static_cast<std::uint64_t>(step->values[0]);
  for (std::size_t i = 0; i < st.names.size(); ++i) {
    for (auto [kind, dst] : {std::pair{"m/", &st.m[i]}, std::pair{"v/", &st.v[i]}}) {
      const auto name = prefix + kind + st.names[i];
      const auto* t = find_tensor(data, name);
      if (!t) throw CheckpointError("checkpoint has no tensor '" + name + "'");
      if (t->values.size() != dst->size()) {
        throw CheckpointError("tensor '" + name + "' has " + std::to_string(t->values.size()) + " values, expected " +
                              std::to_string(dst->size()));
      }
      *dst = t->values;
    }
  }
}

}  // namespace detail

inline CheckpointData to_checkpoint(const TrainingState& s) {
  CheckpointData out;
  out.push_back({"meta/variant/" + to_string(s.variant), Shape{1}, {1.0f}});
  out.push_back({"meta/iteration", Shape{1}, {static_cast<float>(s.iteration)}});
  append_params(out, s.g, "g/");
  detail::append_adam(out, s.g_opt, "adam/g/");
  if (s.d) {
    append_params(out, *s.d, "d/");
    detail::append_adam(out, *s.d_opt, "adam/d/");
  }
  return out;
}

// The resolved config rides along as empty tensors named "meta/config/<key>=<value>".
// out_dir is left out so identical runs in different directories match bytewise.
inline void append_config(CheckpointData& out, const TrainConfig& cfg) {
  for (const auto& [k, v] : config_echo(cfg)) {
    if (k != "out_dir") out.push_back({"meta/config/" + k + "=" + v, Shape{0}, {}});
  }
}

inline KeyValues checkpoint_config(const CheckpointData& data) {
  KeyValues kv;
  const std::string prefix = "meta/config/";
  for (const auto& t : data) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const auto body = t.name.substr(prefix.size());
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config entry '" + t.name + "'");
    kv.emplace_back(body.substr(0, eq), body.substr(eq + 1));
  }
  return kv;
}

inline Variant checkpoint_variant(const CheckpointData& data) {
  for (const auto& t : data) {
    if (t.name.rfind("meta/variant/", 0) == 0) return parse_variant(t.name.substr(13));
  }
  throw CheckpointError("checkpoint has no meta/variant entry");
}

inline std::size_t checkpoint_iteration(const CheckpointData& data) {
  const auto* t = find_tensor(data, "meta/iteration");
  if (!t || t->values.size() != 1) throw CheckpointError("checkpoint has no meta/iteration entry");
  return static_cast<std::size_t>(t->values[0]);
}

// Rebuilds the generator from tensor names and shapes alone.
inline ModelParams<float> load_generator(const CheckpointData& data) {
  GeneratorConfig cfg;
  cfg.arch = generator_architecture(checkpoint_variant(data));
  const auto* shallow = find_tensor(data, "g/shallow.weight");
  if (!shallow || shallow->shape.size() != 4) throw CheckpointError("checkpoint has no tensor 'g/shallow.weight'");
  cfg.channels = shallow->shape[0];
  cfg.blocks = 0;
  while (find_tensor(data, "g/" + block_prefix(cfg.blocks) + ".conv1.weight")) ++cfg.blocks;
  if (cfg.arch != Architecture::RN && cfg.blocks > 0) {
    const auto* fc1 = find_tensor(data, "g/" + block_prefix(0) + ".ca.fc1.weight");
    if (!fc1 || fc1->shape.size() != 2) throw CheckpointError("checkpoint has no channel-attention tensors");
    cfg.reduction = std::max<std::size_t>(1, cfg.channels / fc1->shape[1]);
  }
  auto params = init_generator<float>(cfg, 0);
  restore_params(params, data, "g/");
  return params;
}

// Loads `data` into a state built from the same config. The variant must match.
inline void restore_training_state(TrainingState& s, const CheckpointData& data) {
  const auto v = checkpoint_variant(data);
  if (v != s.variant) {
    throw ConfigError("checkpoint variant " + to_string(v) + " conflicts with requested variant " +
                      to_string(s.variant));
  }
  s.iteration = checkpoint_iteration(data);
  restore_params(s.g, data, "g/");
  detail::restore_adam(s.g_opt, data, "adam/g/");
  if (s.d) {
    restore_params(*s.d, data, "d/");
    detail::restore_adam(*s.d_opt, data, "adam/d/");
  } else if (find_tensor(data, "d/conv1.weight")) {
    throw CheckpointError("checkpoint contains a discriminator but the config trains without one");
  }
}

// ---- data -----------------------------------------------------------------

struct TrainingData {
  std::vector<ImagePair> train;
  std::vector<ImagePair> holdout;
  std::vector<std::string> skipped;
};

inline TrainingData load_training_data(const TrainConfig& cfg) {
  TrainingData out;
  std::vector<ImagePair> all;
  if (cfg.texture_count > 0) {
    auto noise = cfg.noise;
    noise.rng_seed = mix_seed(cfg.seed, 3);
    all = make_texture_dataset(cfg.texture_count, cfg.texture_extent, mix_seed(cfg.seed, 4), noise);
  } else if (!cfg.lr_dir.empty()) {
    all = load_pairs(cfg.lr_dir, cfg.hr_dir, &out.skipped);
  } else {
    // HR only: degrade on the fly, cropping to a multiple of 4 first.
    std::size_t i = 0;
    for (const auto& name : list_png_files(cfg.hr_dir)) {
      try {
        auto hr = read_png(std::filesystem::path(cfg.hr_dir) / name);
        hr = crop(hr, 0, 0, hr.height() / 4 * 4, hr.width() / 4 * 4);
        auto noise = cfg.noise;
        noise.rng_seed = mix_seed(cfg.seed, 5, i++);
        auto lr = make_low_resolution(hr, noise);
        all.push_back({name, std::move(lr), std::move(hr)});
      } catch (const DataError& e) {
        out.skipped.push_back(name + " (" + e.what() + ")");
      }
    }
  }
  if (cfg.holdout >= all.size() && cfg.holdout > 0) {
    throw DataError("holdout (" + std::to_string(cfg.holdout) + ") leaves no training images");
  }
  const auto split = all.size() - cfg.holdout;
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(split));
  out.holdout.assign(all.begin() + static_cast<std::ptrdiff_t>(split), all.end());
  if (out.train.empty()) throw DataError("no training pairs found");
  for (const auto& p : out.train) {
    if (p.lr.height() < cfg.lr_patch || p.lr.width() < cfg.lr_patch) {
      throw DataError(p.name + ": LR extent " + std::to_string(p.lr.height()) + "x" + std::to_string(p.lr.width()) +
                      " is smaller than lr_patch " + std::to_string(cfg.lr_patch));
    }
  }
  return out;
}

struct Batch {
  Tensor<float> lr;  // (0,1)
  Tensor<float> hr;  // (-1,1)
};

// ---- trainer --------------------------------------------------------------

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<ImagePair> train_set)
      : cfg_(std::move(cfg)), data_(std::move(train_set)), phi_(FeatureExtractor<float>::make_default()) {
    cfg_.validate();
    if (data_.empty()) throw DataError("no training pairs");
    state_ = init_training_state(cfg_);
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  TrainingState& state() noexcept { return state_; }
  const TrainingState& state() const noexcept { return state_; }
  bool finished() const noexcept { return state_.iteration >= cfg_.iterations; }

  void resume(const CheckpointData& data) { restore_training_state(state_, data); }

  // Batch for iteration `iter` (1-based). Image order comes from a per-epoch
  // permutation; crop offsets and flips from a per-(iteration, slot) stream.
  Batch make_batch(std::size_t iter) {
    const std::size_t n = data_.size(), p = cfg_.lr_patch;
    std::vector<ImageBuffer> lrs, hrs;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      const std::size_t k = (iter - 1) * cfg_.batch_size + b;
      const auto& pair = data_[permutation(k / n)[k % n]];
      std::mt19937_64 rng(mix_seed(cfg_.seed, 6 + iter, b));
      const auto off = random_patch_offset(pair.lr, p, rng);
      auto lr = crop(pair.lr, off.top, off.left, p, p);
      auto hr = crop(pair.hr, 4 * off.top, 4 * off.left, 4 * p, 4 * p);
      if (std::bernoulli_distribution(0.5)(rng)) {
        lr = hflip(lr);
        hr = hflip(hr);
      }
      lrs.push_back(std::move(lr));
      hrs.push_back(rescale_range(hr, Range::signed_unit));
    }
    return {to_tensor<float>(std::span<const ImageBuffer>(lrs)), to_tensor<float>(std::span<const ImageBuffer>(hrs))};
  }

  IterationLog step() { return step_on(make_batch(state_.iteration + 1)); }

  // One full iteration (D update(s), then G update) on a given batch.
  IterationLog step_on(const Batch& batch) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationLog log;
    log.iter = state_.iteration + 1;
    const auto sr = generator_forward(batch.lr, state_.g);
    std::optional<Tensor<float>> d_fake_for_g;
    if (state_.d) {
      const auto cond = condition(batch.lr);
      for (std::size_t k = 0; k < cfg_.d_steps; ++k) log.d_loss = update_discriminator(cond, batch.hr, sr.detach(), log);
      d_fake_for_g = discriminator_forward_conditioned(cond, sr, *state_.d, BatchNormMode::train);
    }
    update_generator(sr, batch.hr, d_fake_for_g, log);
    state_.iteration = log.iter;
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return log;
  }

  // D input condition for an LR batch; empty for an unconditional D.
  Tensor<float> condition(const Tensor<float>& lr) const {
    if (!state_.d || state_.d->get("conv1.weight").dim(1) != 6) return Tensor<float>();
    return discriminator_condition(lr);
  }

  double update_discriminator(const Tensor<float>& cond, const Tensor<float>& hr, const Tensor<float>& sr_fixed,
                              const IterationLog& log) {
    auto& d = *state_.d;
    d.zero_grad();
    const auto d_real = discriminator_forward_conditioned(cond, hr, d, BatchNormMode::train);
    const auto d_fake = discriminator_forward_conditioned(cond, sr_fixed, d, BatchNormMode::train);
    const auto d_loss = discriminator_loss(d_real, d_fake, cfg_.real_label);
    const double value = static_cast<double>(d_loss.item());
    if (!std::isfinite(value)) {
      auto l = log;
      l.d_loss = value;
      fail_numerical(l, "d_loss");
    }
    backward(d_loss);
    adam_step(d, *state_.d_opt);
    return value;
  }

  void update_generator(const Tensor<float>& sr, const Tensor<float>& hr, const std::optional<Tensor<float>>& d_fake,
                        IterationLog& log) {
    auto loss = composite_loss(sr, hr, d_fake, phi_, cfg_.weights);
    log.terms = loss.report;
    log.g_total = static_cast<double>(loss.total.item());
    if (!std::isfinite(log.g_total)) fail_numerical(log, "g_total");
    state_.g.zero_grad();
    backward(loss.total);
    adam_step(state_.g, state_.g_opt);
    if (state_.d) state_.d->zero_grad();  // grads left over from the generator pass
  }

  // Runs until `iterations` is reached, saving <out_dir>/checkpoint.rcag at
  // the configured cadence and at the end.
  void run(const std::function<void(const IterationLog&)>& on_iteration = {}) {
    while (!finished()) {
      const auto log = step();
      if (on_iteration) on_iteration(log);
      if (cfg_.checkpoint_every && state_.iteration % cfg_.checkpoint_every == 0) save();
    }
    save();
  }

  std::filesystem::path checkpoint_path() const { return std::filesystem::path(cfg_.out_dir) / "checkpoint.rcag"; }
  CheckpointData snapshot() const {
    auto data = to_checkpoint(state_);
    append_config(data, cfg_);
    return data;
  }
  void save() const { save_checkpoint(checkpoint_path(), snapshot()); }

 private:
  const std::vector<std::size_t>& permutation(std::size_t epoch) {
    if (epoch != perm_epoch_ || perm_.empty()) {
      perm_.resize(data_.size());
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(cfg_.seed, 0xe90c, epoch));
      std::shuffle(perm_.begin(), perm_.end(), rng);
      perm_epoch_ = epoch;
    }
    return perm_;
  }

  [[noreturn]] void fail_numerical(const IterationLog& log, const char* what) {
    const auto path = std::filesystem::path(cfg_.out_dir) / "diagnostic.rcag";
    save_checkpoint(path, snapshot());
    throw NumericalError("non-finite " + std::string(what) + " at iteration " + std::to_string(log.iter) + " (" +
                         log.line(false) + "); training state saved to " + path.string());
  }

  TrainConfig cfg_;
  std::vector<ImagePair> data_;
  FeatureExtractor<float> phi_;
  TrainingState state_;
  std::vector<std::size_t> perm_;
  std::size_t perm_epoch_ = 0;
};

}  // namespace rcagan
