// rcagan: degrade / train / sr / eval.
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rcagan/rcagan.hpp"

namespace fs = std::filesystem;
using namespace rcagan;

namespace {

constexpr const char* kToolVersion = "rcagan 0.1.0";

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// manifest.txt next to a command's outputs: enough to rerun it.
struct Manifest {
  Manifest(std::string cmd, std::vector<std::string> args, std::uint64_t s)
      : command(std::move(cmd)), argv(std::move(args)), seed(s) {}

  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::string started = timestamp();
  KeyValues entries;

  void add(const std::string& k, const std::string& v) { entries.emplace_back(k, v); }

  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.txt");
    out << "tool = " << kToolVersion << "\n";
    out << "command = " << command << "\n";
    out << "argv =";
    for (const auto& a : argv) out << " " << a;
    out << "\nseed = " << seed << "\n";
    out << "started = " << started << "\nfinished = " << timestamp() << "\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  }
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  bool verbose = false;
  std::vector<std::string> argv;
};

KeyValues read_config_or_empty(const std::string& path) {
  return path.empty() ? KeyValues{} : read_key_value_file(path);
}

// Applies key = value pairs from --config to a subcommand's own flags
// (named without the leading dashes) unless the flag was given explicitly.
void apply_flag_config(CLI::App& sub, const KeyValues& kv) {
  std::vector<std::string> errors;
  for (const auto& [key, value] : kv) {
    auto* opt = sub.get_option_no_throw("--" + key);
    if (!opt || key == "config") {
      errors.push_back("invalid key '" + key + "' for " + sub.get_name());
      continue;
    }
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      errors.push_back("key '" + key + "': " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

// ---- degrade --------------------------------------------------------------

struct DegradeArgs {
  std::string in;
  bool no_noise = false, no_gaussian = false, no_poisson = false, no_salt_pepper = false;
  std::optional<double> sigma, poisson_scale, sp_density;
};

int cmd_degrade(const DegradeArgs& a, const Common& c) {
  if (c.out.empty()) throw ConfigError("degrade needs --out");
  // --config holds the same noise keys as a training config.
  TrainConfig tc;
  apply_config(tc, read_config_or_empty(c.config));
  auto spec = tc.noise;
  if (a.no_noise) spec.gaussian = spec.poisson = spec.salt_pepper = false;
  if (a.no_gaussian) spec.gaussian = false;
  if (a.no_poisson) spec.poisson = false;
  if (a.no_salt_pepper) spec.salt_pepper = false;
  if (a.sigma) spec.gaussian_sigma = *a.sigma;
  if (a.poisson_scale) spec.poisson_scale = *a.poisson_scale;
  if (a.sp_density) spec.sp_density = *a.sp_density;
  spec.validate();

  const fs::path out(c.out);
  fs::create_directories(out);
  Manifest m{"degrade", c.argv, c.seed};
  m.add("input.hr_dir", a.in);
  m.add("output.lr_dir", c.out);
  m.add("noise_gaussian", spec.gaussian ? "1" : "0");
  m.add("noise_poisson", spec.poisson ? "1" : "0");
  m.add("noise_salt_pepper", spec.salt_pepper ? "1" : "0");
  m.add("gaussian_sigma", detail::fmt(spec.gaussian_sigma));
  m.add("poisson_scale", detail::fmt(spec.poisson_scale));
  m.add("sp_density", detail::fmt(spec.sp_density));

  std::size_t written = 0;
  for (const auto& name : list_png_files(a.in)) {
    try {
      const auto hr = read_png(fs::path(a.in) / name);
      if (hr.height() % 4 || hr.width() % 4) {
        throw DataError(std::to_string(hr.height()) + "x" + std::to_string(hr.width()) + " is not divisible by 4");
      }
      auto s = spec;
      s.rng_seed = mix_seed(c.seed, name_hash(name));
      write_png(out / name, make_low_resolution(hr, s));
      m.add("written", name);
      ++written;
      if (c.verbose) std::cout << "degraded " << name << "\n";
    } catch (const DataError& e) {
      std::cerr << "warning: skipped " << name << ": " << e.what() << "\n";
      m.add("skipped", name + " (" + e.what() + ")");
    }
  }
  m.write(out);
  std::cout << "degrade: " << written << " image(s) written to " << c.out << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> sets;
  std::string variant, resume;
  std::optional<std::size_t> iterations;
  bool seed_given = false, out_given = false;
};

int cmd_train(const TrainArgs& a, const Common& c) {
  // Precedence: checkpoint's own config < --config file < flags.
  std::optional<CheckpointData> resume_data;
  KeyValues kv;
  if (!a.resume.empty()) {
    resume_data = load_checkpoint(a.resume);
    kv = checkpoint_config(*resume_data);
    kv.emplace_back("out_dir", fs::path(a.resume).parent_path().string());
  }
  const auto file_kv = read_config_or_empty(c.config);
  kv.insert(kv.end(), file_kv.begin(), file_kv.end());
  const std::size_t user_begin = kv.size() - file_kv.size();
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.emplace_back(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  if (!a.variant.empty()) kv.emplace_back("variant", a.variant);
  if (a.iterations) kv.emplace_back("iterations", std::to_string(*a.iterations));
  if (a.seed_given) kv.emplace_back("seed", std::to_string(c.seed));
  if (a.out_given) kv.emplace_back("out_dir", c.out);
  const bool variant_requested = std::any_of(kv.begin() + static_cast<std::ptrdiff_t>(user_begin), kv.end(),
                                             [](const auto& p) { return p.first == "variant"; });
  TrainConfig cfg = parse_train_config(kv);

  if (resume_data) {
    const auto ckpt_variant = checkpoint_variant(*resume_data);
    if (variant_requested && ckpt_variant != cfg.variant) {
      throw ConfigError("checkpoint " + a.resume + " holds variant " + to_string(ckpt_variant) +
                        " but variant " + to_string(cfg.variant) + " was requested");
    }
    cfg.variant = ckpt_variant;
  }
  cfg.validate();

  Manifest m{"train", c.argv, cfg.seed};
  if (!a.resume.empty()) m.add("resume", a.resume);
  m.add("output.checkpoint", (fs::path(cfg.out_dir) / "checkpoint.rcag").string());
  m.add("output.log", (fs::path(cfg.out_dir) / "train.log").string());
  for (const auto& [k, v] : config_echo(cfg)) m.add("config." + k, v);

  if (resume_data && checkpoint_iteration(*resume_data) >= cfg.iterations) {
    std::cout << "train: checkpoint is already at iteration " << checkpoint_iteration(*resume_data)
              << " of " << cfg.iterations << "; nothing to do\n";
    m.add("iterations_run", "0");
    m.write(cfg.out_dir);
    return kOk;
  }

  auto data = load_training_data(cfg);
  for (const auto& s : data.skipped) {
    std::cerr << "warning: skipped " << s << "\n";
    m.add("skipped", s);
  }
  Trainer trainer(cfg, data.train);
  if (resume_data) trainer.resume(*resume_data);
  const auto start_iter = trainer.state().iteration;

  fs::create_directories(cfg.out_dir);
  std::ofstream log(fs::path(cfg.out_dir) / "train.log", resume_data ? std::ios::app : std::ios::trunc);
  const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 20);
  try {
    trainer.run([&](const IterationLog& l) {
      const auto line = l.line(cfg.log_wall_ms);
      log << line << "\n";
      if (c.verbose || l.iter % every == 0 || l.iter == cfg.iterations) std::cout << line << std::endl;
    });
  } catch (...) {
    m.add("iterations_run", std::to_string(trainer.state().iteration - start_iter));
    m.add("status", "failed");
    m.write(cfg.out_dir);
    throw;
  }
  m.add("iterations_run", std::to_string(trainer.state().iteration - start_iter));

  if (!data.holdout.empty()) {
    const auto& g = trainer.state().g;
    auto model = evaluate_pairs(data.holdout, [&](const ImageBuffer& lr) { return super_resolve(g, lr); });
    const auto base = evaluate_pairs(data.holdout, bicubic_upsampler());
    model.baseline = base.aggregate();
    model.config["variant"] = to_string(cfg.variant);
    model.write(fs::path(cfg.out_dir) / "holdout");
    std::cout << model.table();
  }
  m.write(cfg.out_dir);
  std::cout << "train: " << trainer.state().iteration << " iterations, checkpoint "
            << trainer.checkpoint_path().string() << "\n";
  return kOk;
}

// ---- sr -------------------------------------------------------------------

struct SrArgs {
  std::string checkpoint, in;
  std::size_t tile = 0, overlap = TileOptions{}.overlap;
};

int cmd_sr(const SrArgs& a, const Common& c) {
  if (c.out.empty()) throw ConfigError("sr needs --out");
  const auto g = load_generator(load_checkpoint(a.checkpoint));
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.in)) {
    for (const auto& n : list_png_files(a.in)) inputs.push_back(fs::path(a.in) / n);
  } else {
    inputs.emplace_back(a.in);
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  Manifest m{"sr", c.argv, c.seed};
  m.add("checkpoint", a.checkpoint);
  m.add("architecture", to_string(g.architecture()));
  m.add("input", a.in);
  m.add("output", c.out);
  m.add("tile", std::to_string(a.tile));
  m.add("overlap", std::to_string(a.overlap));
  std::size_t failed = 0;
  for (const auto& p : inputs) {
    const auto name = p.filename().string();
    try {
      const auto sr = super_resolve(g, read_png(p), TileOptions{a.tile, a.overlap});
      write_png(out / name, sr);
      m.add("written", name);
      if (c.verbose) std::cout << name << " -> " << sr.height() << "x" << sr.width() << "\n";
    } catch (const DataError& e) {
      std::cerr << "error: " << name << ": " << e.what() << "\n";
      m.add("failed", name + " (" + e.what() + ")");
      ++failed;
    }
  }
  m.write(out);
  std::cout << "sr: " << inputs.size() - failed << " of " << inputs.size() << " image(s) written to " << c.out
            << "\n";
  return failed ? kData : kOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string sr, hr, lr;
  bool quantize = false;
  std::size_t scales = 5;
};

int cmd_eval(const EvalArgs& a, const Common& c) {
  const fs::path out(c.out.empty() ? "eval" : c.out);
  EvalOptions opt{a.quantize, a.scales};
  auto report = evaluate_directories(a.sr, a.hr, opt);
  if (!a.lr.empty()) {
    const auto base = evaluate_dataset(bicubic_upsampler(), a.lr, a.hr, opt);
    report.baseline = base.aggregate();
    report.config["lr_dir"] = a.lr;
  }
  report.write(out);
  Manifest m{"eval", c.argv, c.seed};
  m.add("input.sr_dir", a.sr);
  m.add("input.hr_dir", a.hr);
  if (!a.lr.empty()) m.add("input.lr_dir", a.lr);
  m.add("quantize", a.quantize ? "1" : "0");
  m.add("scales", std::to_string(a.scales));
  m.add("output", out.string());
  m.write(out);
  std::cout << report.table();
  if (report.count() == 0) {
    std::cerr << "error: no matched image pairs\n";
    return kData;
  }
  if (!report.missing.empty()) {
    std::cerr << "warning: " << report.missing.size() << " file(s) unmatched or unreadable\n";
    return kData;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4x super-resolution with a residual channel-attention GAN"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);
  auto* seed_opt = app.add_option("--seed", common.seed, "Master seed")->default_val(0);
  auto* out_opt = app.add_option("--out", common.out, "Output directory");
  app.add_option("--config", common.config, "key = value file ('#' comments; flags win)");
  app.add_flag("--verbose,-v", common.verbose, "Per-item / per-iteration output");

  DegradeArgs da;
  auto* degrade = app.add_subcommand("degrade", "HR PNG directory -> x4 downsampled, noised LR PNGs");
  degrade->fallthrough();
  degrade->add_option("--in", da.in, "HR directory")->required()->check(CLI::ExistingDirectory);
  degrade->add_flag("--no-noise", da.no_noise, "Pure bicubic downsampling");
  degrade->add_flag("--no-gaussian", da.no_gaussian);
  degrade->add_flag("--no-poisson", da.no_poisson);
  degrade->add_flag("--no-salt-pepper", da.no_salt_pepper);
  degrade->add_option("--sigma", da.sigma, "Gaussian sigma on (0,1) intensities");
  degrade->add_option("--poisson-scale", da.poisson_scale, "Photons per unit intensity");
  degrade->add_option("--sp-density", da.sp_density, "Salt-and-pepper pixel fraction");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a generator (and discriminator for GAN variants)");
  train->fallthrough();
  train->add_option("--set", ta.sets, "Override a config key (key=value); repeatable");
  train->add_option("--variant", ta.variant, "RN, RN-GAN, RCA1 or RCA2");
  train->add_option("--iterations", ta.iterations, "Generator steps");
  train->add_option("--resume", ta.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  SrArgs sa;
  auto* sr = app.add_subcommand("sr", "Super-resolve PNGs with a trained generator");
  sr->fallthrough();
  sr->add_option("--checkpoint", sa.checkpoint, "Checkpoint file");
  sr->add_option("--in", sa.in, "LR PNG file or directory");
  sr->add_option("--tile", sa.tile, "LR tile extent; 0 = whole image")->default_val(0);
  sr->add_option("--overlap", sa.overlap, "LR context per tile side")->default_val(sa.overlap);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "PSNR / SSIM / MS-SSIM of SR images against HR");
  ev->fallthrough();
  ev->add_option("--sr", ea.sr, "SR directory");
  ev->add_option("--hr", ea.hr, "HR directory");
  ev->add_option("--lr", ea.lr, "LR directory; adds a bicubic baseline row");
  ev->add_flag("--quantize", ea.quantize, "Compare after 8-bit rounding");
  ev->add_option("--scales", ea.scales, "MS-SSIM scales")->default_val(5);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (degrade->parsed()) return cmd_degrade(da, common);
    if (train->parsed()) {
      ta.seed_given = seed_opt->count() > 0;
      ta.out_given = out_opt->count() > 0;
      return cmd_train(ta, common);
    }
    if (sr->parsed()) {
      apply_flag_config(*sr, read_config_or_empty(common.config));
      if (sa.checkpoint.empty() || sa.in.empty()) throw ConfigError("sr needs --checkpoint and --in");
      return cmd_sr(sa, common);
    }
    if (ev->parsed()) {
      apply_flag_config(*ev, read_config_or_empty(common.config));
      if (ea.sr.empty() || ea.hr.empty()) throw ConfigError("eval needs --sr and --hr");
      return cmd_eval(ea, common);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
