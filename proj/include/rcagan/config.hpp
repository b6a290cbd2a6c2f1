#pragma once

// Flat key=value training configuration. '#' starts a comment; later
// assignments (e.g. command-line overrides) win.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rcagan/degrade.hpp"
#include "rcagan/errors.hpp"
#include "rcagan/losses.hpp"
#include "rcagan/models.hpp"
#include "rcagan/optim.hpp"

namespace rcagan {

enum class Variant { RN, RN_GAN, RCA1, RCA2 };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::RN: return "RN";
    case Variant::RN_GAN: return "RN-GAN";
    case Variant::RCA1: return "RCA1";
    case Variant::RCA2: return "RCA2";
  }
  return "?";
}

inline Variant parse_variant(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "RN") return Variant::RN;
  if (s == "RN-GAN" || s == "RNGAN" || s == "RN_GAN") return Variant::RN_GAN;
  if (s == "RCA1" || s == "RCA-GAN1") return Variant::RCA1;
  if (s == "RCA2" || s == "RCA-GAN2") return Variant::RCA2;
  throw ConfigError("unknown variant '" + s + "' (expected RN, RN-GAN, RCA1 or RCA2)");
}

inline Architecture generator_architecture(Variant v) {
  switch (v) {
    case Variant::RN:
    case Variant::RN_GAN: return Architecture::RN;
    case Variant::RCA1: return Architecture::RCA1;
    case Variant::RCA2: return Architecture::RCA2;
  }
  return Architecture::RN;
}

struct TrainConfig {
  Variant variant = Variant::RCA1;
  std::size_t iterations = 10000;  // generator steps
  std::size_t batch_size = 8;
  std::size_t lr_patch = 64;  // LR crop; HR crop is 4x
  std::uint64_t seed = 0;
  std::size_t d_steps = 1;  // discriminator updates per generator update
  double real_label = 1.0;  // 0.9 enables one-sided label smoothing

  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  AdamOptions adam;

  // Data: either paired directories or procedural textures.
  std::string hr_dir, lr_dir;
  std::size_t texture_count = 0;
  std::size_t texture_extent = 256;
  std::size_t holdout = 0;  // last N images excluded from training
  DegradationSpec noise;

  std::string out_dir = "run";
  std::size_t checkpoint_every = 0;  // 0: only at the end
  bool log_wall_ms = true;

  // RN has no adversarial term; RN-GAN/RCA1/RCA2 train a discriminator when lambda1 > 0.
  bool uses_discriminator() const { return variant != Variant::RN && weights.cgan > 0.0; }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (lr_patch == 0) throw ConfigError("lr_patch must be positive");
    if (d_steps == 0) throw ConfigError("d_steps must be positive");
    if (generator.channels == 0 || generator.reduction == 0) throw ConfigError("channels and reduction must be positive");
    if (!(real_label > 0.0 && real_label <= 1.0)) throw ConfigError("real_label must lie in (0, 1]");
    if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
    weights.validate();
    noise.validate();
    if (uses_discriminator() && batch_size < 2) throw ConfigError("GAN training needs batch_size >= 2 (batch norm)");
    if (hr_dir.empty() && texture_count == 0) throw ConfigError("no training data: set hr_dir/lr_dir or texture_count");
  }
};

namespace detail {

template <typename N>
N parse_number(const std::string& value) {
  N out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError("invalid number '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean '" + value + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline const std::map<std::string, ConfigField>& config_fields() {
  using C = TrainConfig;
  auto size_field = [](std::size_t C::*member) {
    return ConfigField{[member](C& c, const std::string& v) { c.*member = parse_number<std::size_t>(v); },
                       [member](const C& c) { return std::to_string(c.*member); }};
  };
  auto nested_size = [](auto getter) {
    return ConfigField{[getter](C& c, const std::string& v) { getter(c) = parse_number<std::size_t>(v); },
                       [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); }};
  };
  auto nested_double = [](auto getter) {
    return ConfigField{[getter](C& c, const std::string& v) { getter(c) = parse_number<double>(v); },
                       [getter](const C& c) { return fmt(getter(const_cast<C&>(c))); }};
  };
  auto nested_bool = [](auto getter) {
    return ConfigField{[getter](C& c, const std::string& v) { getter(c) = parse_bool(v); },
                       [getter](const C& c) { return std::string(getter(const_cast<C&>(c)) ? "1" : "0"); }};
  };
  auto string_field = [](std::string C::*member) {
    return ConfigField{[member](C& c, const std::string& v) { c.*member = v; },
                       [member](const C& c) { return c.*member; }};
  };
  static const std::map<std::string, ConfigField> fields = {
      {"variant", {[](C& c, const std::string& v) { c.variant = parse_variant(v); },
                   [](const C& c) { return to_string(c.variant); }}},
      {"iterations", size_field(&C::iterations)},
      {"batch_size", size_field(&C::batch_size)},
      {"lr_patch", size_field(&C::lr_patch)},
      {"seed", {[](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
                [](const C& c) { return std::to_string(c.seed); }}},
      {"d_steps", size_field(&C::d_steps)},
      {"real_label", nested_double([](C& c) -> double& { return c.real_label; })},
      {"channels", nested_size([](C& c) -> std::size_t& { return c.generator.channels; })},
      {"blocks", nested_size([](C& c) -> std::size_t& { return c.generator.blocks; })},
      {"reduction", nested_size([](C& c) -> std::size_t& { return c.generator.reduction; })},
      {"disc_channels", nested_size([](C& c) -> std::size_t& { return c.discriminator.base_channels; })},
      {"disc_global_pool", nested_bool([](C& c) -> bool& { return c.discriminator.global_pool; })},
      {"disc_conditional", nested_bool([](C& c) -> bool& { return c.discriminator.conditional; })},
      {"lambda_cgan", nested_double([](C& c) -> double& { return c.weights.cgan; })},
      {"lambda_l1", nested_double([](C& c) -> double& { return c.weights.pixel; })},
      {"lambda_gradient", nested_double([](C& c) -> double& { return c.weights.gradient; })},
      {"lambda_content", nested_double([](C& c) -> double& { return c.weights.content; })},
      {"lambda_ssim", nested_double([](C& c) -> double& { return c.weights.ssim; })},
      {"lambda_msssim", nested_double([](C& c) -> double& { return c.weights.msssim; })},
      {"lambda_content_inner", nested_double([](C& c) -> double& { return c.weights.content_inner; })},
      {"lr", nested_double([](C& c) -> double& { return c.adam.lr; })},
      {"beta1", nested_double([](C& c) -> double& { return c.adam.beta1; })},
      {"beta2", nested_double([](C& c) -> double& { return c.adam.beta2; })},
      {"adam_eps", nested_double([](C& c) -> double& { return c.adam.eps; })},
      {"weight_decay", nested_double([](C& c) -> double& { return c.adam.weight_decay; })},
      {"hr_dir", string_field(&C::hr_dir)},
      {"lr_dir", string_field(&C::lr_dir)},
      {"texture_count", size_field(&C::texture_count)},
      {"texture_extent", size_field(&C::texture_extent)},
      {"holdout", size_field(&C::holdout)},
      {"noise_gaussian", nested_bool([](C& c) -> bool& { return c.noise.gaussian; })},
      {"noise_poisson", nested_bool([](C& c) -> bool& { return c.noise.poisson; })},
      {"noise_salt_pepper", nested_bool([](C& c) -> bool& { return c.noise.salt_pepper; })},
      {"gaussian_sigma", nested_double([](C& c) -> double& { return c.noise.gaussian_sigma; })},
      {"poisson_scale", nested_double([](C& c) -> double& { return c.noise.poisson_scale; })},
      {"sp_density", nested_double([](C& c) -> double& { return c.noise.sp_density; })},
      {"out_dir", string_field(&C::out_dir)},
      {"checkpoint_every", size_field(&C::checkpoint_every)},
      {"log_wall_ms", nested_bool([](C& c) -> bool& { return c.log_wall_ms; })},
  };
  return fields;
}

}  // namespace detail

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Parses "key = value" lines. Malformed lines are reported by line number.
inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(source + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
  return out;
}

inline KeyValues read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_key_values(in, path.string());
}

// Applies every pair; all unknown keys and bad values are collected and
// reported together, one per line.
inline void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  const auto& fields = detail::config_fields();
  std::vector<std::string> errors;
  for (const auto& [key, value] : kv) {
    auto it = fields.find(key);
    if (it == fields.end()) {
      errors.push_back("invalid key '" + key + "'");
      continue;
    }
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError& e) {
      errors.push_back("key '" + key + "': " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
}

inline TrainConfig parse_train_config(const KeyValues& kv) {
  TrainConfig cfg;
  apply_config(cfg, kv);
  return cfg;
}

// Every key with its resolved value, sorted by key.
inline KeyValues config_echo(const TrainConfig& cfg) {
  KeyValues out;
  for (const auto& [key, field] : detail::config_fields()) out.emplace_back(key, field.get(cfg));
  return out;
}

inline std::string to_kv_text(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

}  // namespace rcagan
