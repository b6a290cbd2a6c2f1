#pragma once

// Evaluation metrics on (0,1) images, outside the autodiff graph.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcagan/dataset.hpp"
#include "rcagan/errors.hpp"
#include "rcagan/image.hpp"
#include "rcagan/losses.hpp"
#include "rcagan/png_io.hpp"

namespace rcagan {

namespace detail {

inline void require_same_extent(const ImageBuffer& a, const ImageBuffer& b, const char* op) {
  if (a.height() != b.height()) throw DimensionError(op, "H", a.height(), b.height());
  if (a.width() != b.width()) throw DimensionError(op, "W", a.width(), b.width());
  if (a.channels() != b.channels()) throw DimensionError(op, "C", a.channels(), b.channels());
}

inline ImageBuffer as_unit(const ImageBuffer& img) {
  return img.range() == Range::unit ? img : rescale_range(img, Range::unit);
}

}  // namespace detail

// 10 log10(peak^2 / MSE); +infinity when the images are identical.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
  detail::require_same_extent(a, b, "psnr");
  const auto av = a.values(), bv = b.values();
  double se = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(av.size());
  return 10.0 * std::log10(peak * peak / mse);
}

inline std::string format_db(double db) {
  if (std::isinf(db)) return "inf";
  if (std::isnan(db)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << db;
  return os.str();
}

inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  detail::require_same_extent(a, b, "ssim");
  NoGradGuard guard;
  return ssim_index(to_tensor<double>(detail::as_unit(a)), to_tensor<double>(detail::as_unit(b))).item();
}

inline double msssim(const ImageBuffer& a, const ImageBuffer& b, std::size_t max_scales = 5) {
  detail::require_same_extent(a, b, "msssim");
  NoGradGuard guard;
  return msssim_index(to_tensor<double>(detail::as_unit(a)), to_tensor<double>(detail::as_unit(b)), SsimOptions{},
                      max_scales)
      .item();
}

// Mean |p(y,x) - p(y,x+1)| and |p(y,x) - p(y+1,x)| over the interior
// (`margin` pixels dropped on each side). On an output that should be flat
// this is the energy of stride-2 alternation artifacts.
inline double checkerboard_energy(const ImageBuffer& img, std::size_t margin = 0) {
  if (img.height() < 2 * margin + 2 || img.width() < 2 * margin + 2) {
    throw DimensionError("checkerboard_energy", "extent", 2 * margin + 2, std::min(img.height(), img.width()));
  }
  const std::size_t y1 = img.height() - margin - 1, x1 = img.width() - margin - 1;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = margin; y < y1; ++y)
    for (std::size_t x = margin; x < x1; ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) {
        acc += std::abs(img.at(y, x, c) - img.at(y, x + 1, c)) + std::abs(img.at(y, x, c) - img.at(y + 1, x, c));
        count += 2;
      }
  return acc / static_cast<double>(count);
}

struct EvalRow {
  std::string name;
  double psnr = 0.0;
  double ssim = std::numeric_limits<double>::quiet_NaN();    // NaN if smaller than the window
  double msssim = std::numeric_limits<double>::quiet_NaN();
};

struct EvalAggregate {
  double psnr = 0.0, ssim = 0.0, msssim = 0.0;
  std::size_t psnr_count = 0, ssim_count = 0, msssim_count = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> missing;  // unmatched or unreadable files, with reason
  std::map<std::string, std::string> config;
  std::optional<EvalAggregate> baseline;  // bicubic-upsampled LR vs HR, when requested

  std::size_t count() const { return rows.size(); }
  std::size_t infinite_psnr_count() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += std::isinf(r.psnr);
    return n;
  }

  // Arithmetic means; infinite PSNR and NaN entries are left out.
  std::optional<EvalAggregate> aggregate() const { return aggregate_rows(rows); }

  static std::optional<EvalAggregate> aggregate_rows(const std::vector<EvalRow>& rows) {
    if (rows.empty()) return std::nullopt;
    EvalAggregate a;
    for (const auto& r : rows) {
      if (std::isfinite(r.psnr)) {
        a.psnr += r.psnr;
        ++a.psnr_count;
      }
      if (std::isfinite(r.ssim)) {
        a.ssim += r.ssim;
        ++a.ssim_count;
      }
      if (std::isfinite(r.msssim)) {
        a.msssim += r.msssim;
        ++a.msssim_count;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    a.psnr = a.psnr_count ? a.psnr / static_cast<double>(a.psnr_count) : nan;
    a.ssim = a.ssim_count ? a.ssim / static_cast<double>(a.ssim_count) : nan;
    a.msssim = a.msssim_count ? a.msssim / static_cast<double>(a.msssim_count) : nan;
    return a;
  }

  std::string table() const {
    std::ostringstream os;
    os << std::left << std::setw(28) << "image" << std::right << std::setw(12) << "psnr_db" << std::setw(10) << "ssim"
       << std::setw(10) << "msssim" << "\n";
    auto num = [](double v) {
      if (std::isnan(v)) return std::string("n/a");
      std::ostringstream s;
      s << std::fixed << std::setprecision(4) << v;
      return s.str();
    };
    for (const auto& r : rows) {
      os << std::left << std::setw(28) << r.name << std::right << std::setw(12) << format_db(r.psnr) << std::setw(10)
         << num(r.ssim) << std::setw(10) << num(r.msssim) << "\n";
    }
    if (auto a = aggregate()) {
      os << std::left << std::setw(28) << "mean" << std::right << std::setw(12) << format_db(a->psnr) << std::setw(10)
         << num(a->ssim) << std::setw(10) << num(a->msssim) << "\n";
    }
    if (baseline) {
      os << std::left << std::setw(28) << "bicubic baseline" << std::right << std::setw(12)
         << format_db(baseline->psnr) << std::setw(10) << num(baseline->ssim) << std::setw(10) << num(baseline->msssim)
         << "\n";
    }
    os << "count " << count();
    if (const auto inf = infinite_psnr_count()) os << " (" << inf << " identical, psnr inf excluded from mean)";
    os << "\n";
    for (const auto& m : missing) os << "missing " << m << "\n";
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os.precision(10);
    for (const auto& [k, v] : config) os << "config." << k << "=" << v << "\n";
    os << "count=" << count() << "\n";
    os << "psnr_inf_count=" << infinite_psnr_count() << "\n";
    os << "missing_count=" << missing.size() << "\n";
    for (const auto& r : rows) {
      os << "image." << r.name << ".psnr=" << format_db(r.psnr) << "\n";
      os << "image." << r.name << ".ssim=" << r.ssim << "\n";
      os << "image." << r.name << ".msssim=" << r.msssim << "\n";
    }
    if (auto a = aggregate()) {
      os << "mean.psnr=" << a->psnr << "\nmean.ssim=" << a->ssim << "\nmean.msssim=" << a->msssim << "\n";
    }
    if (baseline) {
      os << "baseline.psnr=" << baseline->psnr << "\nbaseline.ssim=" << baseline->ssim
         << "\nbaseline.msssim=" << baseline->msssim << "\n";
    }
    for (const auto& m : missing) os << "missing=" << m << "\n";
    return os.str();
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.txt") << table();
    std::ofstream(dir / "report.kv") << key_values();
  }
};

struct EvalOptions {
  bool quantize = false;  // compare after 8-bit round trip of both images
  std::size_t msssim_scales = 5;
};

inline EvalRow evaluate_pair(const std::string& name, const ImageBuffer& sr, const ImageBuffer& hr,
                             const EvalOptions& opt = {}) {
  ImageBuffer a = detail::as_unit(sr), b = detail::as_unit(hr);
  clamp_to_range(a);
  if (opt.quantize) {
    a = quantized(a);
    b = quantized(b);
  }
  EvalRow row{name, psnr(a, b, 1.0)};
  if (std::min(a.height(), a.width()) >= 11) {
    row.ssim = ssim(a, b);
    row.msssim = msssim(a, b, opt.msssim_scales);
  }
  return row;
}

using Upsampler = std::function<ImageBuffer(const ImageBuffer& lr)>;

inline Upsampler bicubic_upsampler() {
  return [](const ImageBuffer& lr) { return bicubic_resample(lr, ScaleFactor::up(4)); };
}

inline EvalReport evaluate_pairs(const std::vector<ImagePair>& pairs, const Upsampler& model,
                                 const EvalOptions& opt = {}) {
  EvalReport report;
  for (const auto& p : pairs) report.rows.push_back(evaluate_pair(p.name, model(p.lr), p.hr, opt));
  return report;
}

// Runs `model` on every LR/HR pair; unmatched or unreadable files are listed
// in the report and skipped.
inline EvalReport evaluate_dataset(const Upsampler& model, const std::filesystem::path& lr_dir,
                                   const std::filesystem::path& hr_dir, const EvalOptions& opt = {}) {
  std::vector<std::string> skipped;
  const auto pairs = load_pairs(lr_dir, hr_dir, &skipped);
  auto report = evaluate_pairs(pairs, model, opt);
  report.missing = std::move(skipped);
  report.config["lr_dir"] = lr_dir.string();
  report.config["hr_dir"] = hr_dir.string();
  report.config["quantize"] = opt.quantize ? "1" : "0";
  return report;
}

// Compares same-named images of equal extent in two directories.
inline EvalReport evaluate_directories(const std::filesystem::path& sr_dir, const std::filesystem::path& hr_dir,
                                       const EvalOptions& opt = {}) {
  const auto pairing = pair_by_filename(sr_dir, hr_dir);
  EvalReport report;
  report.config["sr_dir"] = sr_dir.string();
  report.config["hr_dir"] = hr_dir.string();
  report.config["quantize"] = opt.quantize ? "1" : "0";
  for (const auto& name : pairing.matched) {
    try {
      const auto sr = read_png(sr_dir / name);
      const auto hr = read_png(hr_dir / name);
      if (!sr.same_extent(hr)) {
        report.missing.push_back(name + " (extent mismatch)");
        continue;
      }
      report.rows.push_back(evaluate_pair(name, sr, hr, opt));
    } catch (const DataError& e) {
      report.missing.push_back(name + " (" + e.what() + ")");
    }
  }
  for (const auto& n : pairing.only_in_first) report.missing.push_back(n + " (no HR)");
  for (const auto& n : pairing.only_in_second) report.missing.push_back(n + " (no SR)");
  return report;
}

}  // namespace rcagan
