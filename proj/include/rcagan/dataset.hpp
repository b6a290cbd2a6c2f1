#pragma once

// Paired LR/HR image sets: directory pairing by filename and a procedural
// texture generator for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rcagan/degrade.hpp"
#include "rcagan/image.hpp"
#include "rcagan/png_io.hpp"

namespace rcagan {

struct ImagePair {
  std::string name;
  ImageBuffer lr;  // (0,1)
  ImageBuffer hr;  // (0,1)
};

// Sorted *.png filenames directly inside `dir`.
inline std::vector<std::string> list_png_files(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

struct FilePairing {
  std::vector<std::string> matched;
  std::vector<std::string> only_in_first;
  std::vector<std::string> only_in_second;
};

inline FilePairing pair_by_filename(const std::filesystem::path& first, const std::filesystem::path& second) {
  const auto a = list_png_files(first);
  const auto b = list_png_files(second);
  FilePairing p;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(p.matched));
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(p.only_in_first));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(p.only_in_second));
  return p;
}

// Loads every LR/HR pair whose HR extent is exactly 4x the LR extent.
inline std::vector<ImagePair> load_pairs(const std::filesystem::path& lr_dir, const std::filesystem::path& hr_dir,
                                         std::vector<std::string>* skipped = nullptr) {
  const auto pairing = pair_by_filename(lr_dir, hr_dir);
  std::vector<ImagePair> out;
  for (const auto& name : pairing.matched) {
    ImageBuffer lr, hr;
    try {
      lr = read_png(lr_dir / name);
      hr = read_png(hr_dir / name);
    } catch (const DataError& e) {
      if (!skipped) throw;
      skipped->push_back(name + " (" + e.what() + ")");
      continue;
    }
    if (hr.height() != 4 * lr.height() || hr.width() != 4 * lr.width()) {
      if (skipped) skipped->push_back(name + " (HR extent is not 4x LR)");
      continue;
    }
    out.push_back({name, std::move(lr), std::move(hr)});
  }
  if (skipped) {
    for (const auto& n : pairing.only_in_first) skipped->push_back(n + " (no HR)");
    for (const auto& n : pairing.only_in_second) skipped->push_back(n + " (no LR)");
  }
  return out;
}

// Smooth colour gradient + oriented gratings + hard-edged shapes, in (0,1).
inline ImageBuffer procedural_texture(std::size_t height, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(height, width, 3, Range::unit);
  const double h = static_cast<double>(height), w = static_cast<double>(width);

  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = 0.2 + 0.6 * u(rng);
    c1[c] = 0.2 + 0.6 * u(rng);
  }
  const double gdir = 2.0 * std::numbers::pi * u(rng);
  struct Grating {
    double kx, ky, phase, amp[3];
  };
  std::vector<Grating> gratings(2 + static_cast<int>(u(rng) * 2));
  for (auto& g : gratings) {
    const double period = 8.0 + 32.0 * u(rng);
    const double theta = std::numbers::pi * u(rng);
    g.kx = 2.0 * std::numbers::pi * std::cos(theta) / period;
    g.ky = 2.0 * std::numbers::pi * std::sin(theta) / period;
    g.phase = 2.0 * std::numbers::pi * u(rng);
    for (double& a : g.amp) a = 0.04 + 0.1 * u(rng);
  }
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double t = 0.5 + 0.5 * ((static_cast<double>(x) / w - 0.5) * std::cos(gdir) +
                                    (static_cast<double>(y) / h - 0.5) * std::sin(gdir));
      for (std::size_t c = 0; c < 3; ++c) {
        double v = c0[c] + (c1[c] - c0[c]) * t;
        for (const auto& g : gratings) {
          v += g.amp[c] * std::sin(g.kx * static_cast<double>(x) + g.ky * static_cast<double>(y) + g.phase);
        }
        img.at(y, x, c) = v;
      }
    }

  const int shapes = 3 + static_cast<int>(u(rng) * 5);
  for (int s = 0; s < shapes; ++s) {
    const bool disk = u(rng) < 0.5;
    const double cy = h * u(rng), cx = w * u(rng);
    const double ry = h * (0.05 + 0.15 * u(rng)), rx = disk ? ry : w * (0.05 + 0.15 * u(rng));
    const double alpha = 0.5 + 0.5 * u(rng);
    double col[3];
    for (double& c : col) c = u(rng);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (1.0 - alpha) * img.at(y, x, c) + alpha * col[c];
      }
  }
  clamp_to_range(img);
  return img;
}

// `count` procedural HR images of hr_extent^2 with degraded x4 LR partners.
// Image i uses texture seed (seed, i) and noise seed (degradation.rng_seed, i).
inline std::vector<ImagePair> make_texture_dataset(std::size_t count, std::size_t hr_extent, std::uint64_t seed,
                                                   DegradationSpec degradation) {
  std::vector<ImagePair> out;
  out.reserve(count);
  const std::uint64_t noise_base = degradation.rng_seed;
  for (std::size_t i = 0; i < count; ++i) {
    auto hr = procedural_texture(hr_extent, hr_extent, seed * 1000003ULL + i);
    degradation.rng_seed = noise_base * 1000003ULL + i;
    auto lr = make_low_resolution(hr, degradation);
    out.push_back({"tex" + std::to_string(i) + ".png", std::move(lr), std::move(hr)});
  }
  return out;
}

}  // namespace rcagan
