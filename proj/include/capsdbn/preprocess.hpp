#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn {

/// One image: pixels [C,H,W] (in [0,1] on ingestion) plus optional label.
struct ImagePatch {
  Tensor<float> pixels;
  std::optional<std::size_t> label;
  std::string source_id;

  std::size_t channels() const { return pixels.extent(0); }
  std::size_t height() const { return pixels.extent(1); }
  std::size_t width() const { return pixels.extent(2); }
};

/// Per-image, per-channel zero mean / unit (population) variance.
/// Constant channels map to zeros via `eps` in the denominator.
inline ImagePatch standardize_channels(ImagePatch p, double eps = 1e-8) {
  if (p.pixels.rank() != 3) throw ConfigError("standardize_channels: expected [C,H,W] pixels");
  const std::size_t plane = p.height() * p.width();
  if (plane < 2) throw ConfigError("standardize_channels: image needs at least two pixels");
  for (std::size_t c = 0; c < p.channels(); ++c) {
    std::span<float> px = p.pixels.slice(c);
    double mean = 0.0;
    for (float v : px) mean += v;
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (float v : px) var += (v - mean) * (v - mean);
    var /= static_cast<double>(plane);
    const double denom = std::sqrt(var) + eps;
    for (float& v : px) v = static_cast<float>((v - mean) / denom);
  }
  return p;
}

/// k x k median filter per channel with replicate padding at the borders.
inline ImagePatch median_filter(ImagePatch p, std::size_t k) {
  if (k % 2 == 0) throw ConfigError("median_filter: window must be odd, got " + std::to_string(k));
  const std::size_t H = p.height(), W = p.width();
  if (k > std::min(H, W)) throw ConfigError("median_filter: window exceeds image extent");
  if (k == 1) return p;
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const Tensor<float> src = p.pixels;
  std::vector<float> window(k * k);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t c = 0; c < p.channels(); ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t n = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
            window[n++] = src(c, clampi(static_cast<std::ptrdiff_t>(y) + dy, H),
                              clampi(static_cast<std::ptrdiff_t>(x) + dx, W));
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        p.pixels(c, y, x) = *mid;
      }
    }
  }
  return p;
}

// Lossless geometric transforms.

inline Tensor<float> flip_horizontal(const Tensor<float>& t) {
  Tensor<float> out(t.shape());
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out(c, y, x) = t(c, y, W - 1 - x);
  return out;
}

inline Tensor<float> flip_vertical(const Tensor<float>& t) {
  Tensor<float> out(t.shape());
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out(c, y, x) = t(c, H - 1 - y, x);
  return out;
}

/// Rotates counter-clockwise by 90 degrees; [C,H,W] -> [C,W,H].
inline Tensor<float> rotate90(const Tensor<float>& t) {
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  Tensor<float> out({C, W, H});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < W; ++y)
      for (std::size_t x = 0; x < H; ++x) out(c, y, x) = t(c, x, W - 1 - y);
  return out;
}

inline Tensor<float> crop(const Tensor<float>& t, std::size_t top, std::size_t left,
                          std::size_t extent) {
  const std::size_t C = t.extent(0);
  if (top + extent > t.extent(1) || left + extent > t.extent(2))
    throw ConfigError("crop: window exceeds image");
  Tensor<float> out({C, extent, extent});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < extent; ++y)
      for (std::size_t x = 0; x < extent; ++x) out(c, y, x) = t(c, top + y, left + x);
  return out;
}

inline Tensor<float> center_crop(const Tensor<float>& t, std::size_t extent) {
  if (extent > std::min(t.extent(1), t.extent(2)))
    throw ConfigError("center_crop: crop extent exceeds image");
  return crop(t, (t.extent(1) - extent) / 2, (t.extent(2) - extent) / 2, extent);
}

struct AugmentSpec {
  bool horizontal_flip = false;
  bool vertical_flip = false;
  std::vector<int> rotations;  // subset of {90, 180, 270}
  std::optional<std::size_t> crop_extent;
  std::size_t multiplier = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (multiplier < 1) throw ConfigError("augment.multiplier must be >= 1");
    for (int r : rotations)
      if (r != 90 && r != 180 && r != 270)
        throw ConfigError("augment.rotations: only 90, 180 and 270 are supported, got " +
                          std::to_string(r));
    if (crop_extent && *crop_extent == 0) throw ConfigError("augment.crop must be positive");
  }
};

/// Expands each input into `multiplier` copies. Copy 0 is the source (center
/// cropped when cropping is on); later copies draw a random combination of
/// the enabled transforms. Output order: all copies of input 0, then input 1...
inline std::vector<ImagePatch> augment(const std::vector<ImagePatch>& batch, const AugmentSpec& spec) {
  spec.validate();
  RandomStream stream(spec.seed);
  std::vector<ImagePatch> out;
  out.reserve(batch.size() * spec.multiplier);
  for (const ImagePatch& src : batch) {
    if (spec.crop_extent && *spec.crop_extent > std::min(src.height(), src.width()))
      throw ConfigError("augment: crop extent " + std::to_string(*spec.crop_extent) +
                        " larger than image " + shape_str(src.pixels.shape()));
    if (!spec.rotations.empty() && src.height() != src.width() &&
        std::any_of(spec.rotations.begin(), spec.rotations.end(), [](int r) { return r != 180; }))
      throw ConfigError("augment: 90/270 degree rotations need square images");
    for (std::size_t copy = 0; copy < spec.multiplier; ++copy) {
      ImagePatch p{src.pixels, src.label, src.source_id};
      std::string tag = "#aug" + std::to_string(copy);
      if (copy == 0) {
        if (spec.crop_extent) p.pixels = center_crop(p.pixels, *spec.crop_extent);
      } else {
        if (spec.horizontal_flip && stream.bernoulli(0.5)) {
          p.pixels = flip_horizontal(p.pixels);
          tag += ":hflip";
        }
        if (spec.vertical_flip && stream.bernoulli(0.5)) {
          p.pixels = flip_vertical(p.pixels);
          tag += ":vflip";
        }
        if (!spec.rotations.empty()) {
          const auto pick = stream.below(spec.rotations.size() + 1);
          if (pick > 0) {
            const int deg = spec.rotations[pick - 1];
            for (int q = 0; q < deg / 90; ++q) p.pixels = rotate90(p.pixels);
            tag += ":rot" + std::to_string(deg);
          }
        }
        if (spec.crop_extent) {
          const std::size_t e = *spec.crop_extent;
          const auto top = static_cast<std::size_t>(stream.below(p.height() - e + 1));
          const auto left = static_cast<std::size_t>(stream.below(p.width() - e + 1));
          p.pixels = crop(p.pixels, top, left, e);
          tag += ":crop" + std::to_string(top) + "x" + std::to_string(left);
        }
      }
      p.source_id += tag;
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// Per-position statistics fitted on a training batch.
struct WhiteningStats {
  Tensor<float> mean;
  Tensor<float> stddev;
  double eps = 1e-8;

  /// Replays the fitted transform; depends only on the saved statistics.
  ImagePatch apply(ImagePatch p) const {
    if (p.pixels.shape() != mean.shape())
      throw ConfigError("whitening: patch shape " + shape_str(p.pixels.shape()) +
                        " does not match statistics " + shape_str(mean.shape()));
    for (std::size_t i = 0; i < p.pixels.size(); ++i)
      p.pixels[i] = static_cast<float>((static_cast<double>(p.pixels[i]) - mean[i]) /
                                       (static_cast<double>(stddev[i]) + eps));
    return p;
  }
};

struct WhitenResult {
  std::vector<ImagePatch> patches;
  WhiteningStats stats;
  bool degenerate = false;  // set when the batch has a single image
};

/// Dataset-level whitening: at each (c,y,x) position, zero mean and unit
/// variance across the batch.
inline WhitenResult whiten_for_dbn(const std::vector<ImagePatch>& batch, double eps = 1e-8) {
  if (batch.empty()) throw ConfigError("whiten_for_dbn: empty batch");
  const Shape& shape = batch.front().pixels.shape();
  const std::size_t n = shape_size(shape);
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  for (const ImagePatch& p : batch) {
    if (p.pixels.shape() != shape) throw ConfigError("whiten_for_dbn: patches differ in shape");
    for (std::size_t i = 0; i < n; ++i) mean[i] += p.pixels[i];
  }
  const auto count = static_cast<double>(batch.size());
  for (double& m : mean) m /= count;
  for (const ImagePatch& p : batch)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = p.pixels[i] - mean[i];
      var[i] += d * d;
    }
  WhitenResult result;
  result.stats.eps = eps;
  result.stats.mean = Tensor<float>(shape);
  result.stats.stddev = Tensor<float>(shape);
  for (std::size_t i = 0; i < n; ++i) {
    result.stats.mean[i] = static_cast<float>(mean[i]);
    result.stats.stddev[i] = static_cast<float>(std::sqrt(var[i] / count));
  }
  result.degenerate = batch.size() == 1;
  result.patches.reserve(batch.size());
  for (const ImagePatch& p : batch) result.patches.push_back(result.stats.apply(p));
  return result;
}

}  // namespace capsdbn
