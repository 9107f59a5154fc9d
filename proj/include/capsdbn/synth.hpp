#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/preprocess.hpp"
#include "capsdbn/random.hpp"

namespace capsdbn {

/// Category names in their default id order.
inline const std::vector<std::string>& default_category_names() {
  static const std::vector<std::string> names = {"Lesion not found", "Image with no referral",
                                                 "Visited for different Reasons", "Low Risk of Cancer",
                                                 "High Risk of Cancer"};
  return names;
}

namespace detail {

// Pattern families, one per category:
//   0 smooth low-frequency shading
//   1 oriented stripes (random angle, period 5-8 px)
//   2 one bright disk
//   3 scattered small dark spots
//   4 dark ring with speckle
// Every family is closed under flips and right-angle rotations, so the
// lossless augmentations keep labels valid.
inline void paint_family(std::size_t family, std::vector<double>& m, std::size_t E, RandomStream& rs) {
  const double e = static_cast<double>(E);
  auto at = [&](std::size_t y, std::size_t x) -> double& { return m[y * E + x]; };
  switch (family) {
    case 0: {
      const double th = rs.uniform(0.0, std::numbers::pi), ph = rs.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t y = 0; y < E; ++y)
        for (std::size_t x = 0; x < E; ++x)
          at(y, x) += 0.08 * std::sin(2.0 * std::numbers::pi * (y * std::cos(th) + x * std::sin(th)) / e + ph);
      break;
    }
    case 1: {
      const double th = rs.uniform(0.0, std::numbers::pi), ph = rs.uniform(0.0, 2.0 * std::numbers::pi);
      const double period = rs.uniform(5.0, 8.0);
      for (std::size_t y = 0; y < E; ++y)
        for (std::size_t x = 0; x < E; ++x)
          at(y, x) += 0.25 * std::sin(2.0 * std::numbers::pi * (y * std::cos(th) + x * std::sin(th)) / period + ph);
      break;
    }
    case 2: {
      const double r = rs.uniform(e / 5.0, e / 3.0);
      const double cy = rs.uniform(r, e - r), cx = rs.uniform(r, e - r);
      for (std::size_t y = 0; y < E; ++y)
        for (std::size_t x = 0; x < E; ++x) {
          const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
          at(y, x) += 0.35 * std::clamp(r - d + 0.5, 0.0, 1.0);
        }
      break;
    }
    case 3: {
      const auto spots = 5 + rs.below(5);
      for (std::uint64_t s = 0; s < spots; ++s) {
        const double r = rs.uniform(1.5, 3.0);
        const double cy = rs.uniform(0.0, e), cx = rs.uniform(0.0, e);
        for (std::size_t y = 0; y < E; ++y)
          for (std::size_t x = 0; x < E; ++x) {
            const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
            at(y, x) -= 0.35 * std::clamp(r - d + 0.5, 0.0, 1.0);
          }
      }
      break;
    }
    default: {
      const double r = rs.uniform(e / 5.0, e / 3.5);
      const double cy = rs.uniform(r + 2.0, e - r - 2.0), cx = rs.uniform(r + 2.0, e - r - 2.0);
      for (std::size_t y = 0; y < E; ++y)
        for (std::size_t x = 0; x < E; ++x) {
          const double d = std::abs(std::hypot(y + 0.5 - cy, x + 0.5 - cx) - r);
          at(y, x) -= 0.35 * std::clamp(1.75 - d, 0.0, 1.0) + rs.uniform(-0.1, 0.1);
        }
      break;
    }
  }
}

}  // namespace detail

/// Synthetic stand-in for the clinical images: `per_category` RGB patches of
/// extent x extent for each of K <= 5 categories, ordered by category. Pixels
/// are quantized to multiples of 1/255 so a PNG round trip is lossless.
inline std::vector<ImagePatch> synth_dataset(std::size_t K, std::size_t per_category, std::size_t extent,
                                             std::uint64_t seed) {
  if (extent < 16) throw ConfigError("synth_dataset: extent must be >= 16");
  if (K < 1 || K > 5) throw ConfigError("synth_dataset: between 1 and 5 categories are available");
  static constexpr std::array<std::array<double, 3>, 5> kBase = {{{0.85, 0.60, 0.60},
                                                                  {0.75, 0.55, 0.68},
                                                                  {0.80, 0.70, 0.52},
                                                                  {0.68, 0.48, 0.50},
                                                                  {0.60, 0.42, 0.46}}};
  static constexpr std::array<double, 3> kChannelGain = {1.0, 0.8, 0.9};
  const RandomStream root(seed);
  std::vector<ImagePatch> out;
  out.reserve(K * per_category);
  std::vector<double> modulation(extent * extent);
  for (std::size_t k = 0; k < K; ++k) {
    RandomStream rs = root.fork("synth-category-" + std::to_string(k));
    for (std::size_t i = 0; i < per_category; ++i) {
      std::fill(modulation.begin(), modulation.end(), 0.0);
      detail::paint_family(k, modulation, extent, rs);
      ImagePatch p{Tensor<float>({3, extent, extent}), k, "synth/c" + std::to_string(k) + "/" + std::to_string(i)};
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = kBase[k][c] + rs.uniform(-0.03, 0.03);
        for (std::size_t n = 0; n < extent * extent; ++n) {
          const double v = std::clamp(base + kChannelGain[c] * modulation[n] + rs.normal(0.0, 0.03), 0.0, 1.0);
          p.pixels[c * extent * extent + n] = static_cast<float>(std::round(v * 255.0) / 255.0);
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace capsdbn
