#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/rng.hpp"

namespace despeckle {

// Smallest intensity the toolkit works with. Applying this floor before any
// log transform keeps log(I) finite; it equals the smallest nonzero 8-bit
// level after normalization.
inline constexpr double kIntensityFloor = 1.0 / 255.0;

/// Single-channel image with row-major doubles, nominally in [0, 1].
/// Images are immutable values once built; every operation returns a copy.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    assert(w >= 1 && h >= 1);
  }

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const double& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t pixel_count() const { return data.size(); }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }
};

inline double min_value(const Image& img) {
  return *std::min_element(img.data.begin(), img.data.end());
}

inline double max_value(const Image& img) {
  return *std::max_element(img.data.begin(), img.data.end());
}

inline double mean_value(const Image& img) {
  double s = 0.0;
  for (double v : img.data) s += v;
  return s / static_cast<double>(img.pixel_count());
}

inline double variance_value(const Image& img) {
  const double m = mean_value(img);
  double s = 0.0;
  for (double v : img.data) s += (v - m) * (v - m);
  return s / static_cast<double>(img.pixel_count());
}

/// Elementwise max with a positive floor; 0 < floor < 1 required.
inline Image clamp_floor(const Image& img, double floor_value) {
  if (!(floor_value > 0.0) || !(floor_value < 1.0))
    throw InvalidFloor("clamp_floor: floor must lie in (0, 1), got " + std::to_string(floor_value));
  Image out = img;
  for (double& v : out.data) v = std::max(v, floor_value);
  return out;
}

inline Image clamp_unit(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

/// Clamp into the working range [floor, 1].
inline Image clamp_range(const Image& img, double floor_value = kIntensityFloor) {
  Image out = img;
  for (double& v : out.data) v = std::clamp(v, floor_value, 1.0);
  return out;
}

/// Rotate by quarter turns clockwise (k modulo 4). Pure index remap, no
/// interpolation, so rotations are exactly invertible.
inline Image rotate90(const Image& img, int quarter_turns) {
  int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return img;
  Image out;
  if (k == 2) {
    out = Image(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(y, x) = img.at(img.height - 1 - y, img.width - 1 - x);
    return out;
  }
  out = Image(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (k == 1)
        out.at(x, img.height - 1 - y) = img.at(y, x);  // 90 degrees cw
      else
        out.at(img.width - 1 - x, y) = img.at(y, x);  // 270 degrees cw
    }
  return out;
}

/// Contiguous size x size sub-image at a seed-chosen uniform offset.
inline Image crop_patch(const Image& img, int size, std::uint64_t seed) {
  if (size > img.width || size > img.height)
    throw PatchTooLarge("crop_patch: patch " + std::to_string(size) + " exceeds image " +
                        std::to_string(img.width) + "x" + std::to_string(img.height));
  rng::Stream s(seed);
  const int ox = static_cast<int>(s.next_below(static_cast<std::uint64_t>(img.width - size + 1)));
  const int oy = static_cast<int>(s.next_below(static_cast<std::uint64_t>(img.height - size + 1)));
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = img.at(oy + y, ox + x);
  return out;
}

/// Training-set augmentation parameters. Rotations are right angles only so
/// augmentation never resamples.
struct AugmentParams {
  std::vector<int> rotation_set = {0, 90, 180, 270};  // degrees
  std::vector<double> noise_means = {0.0, 0.05};
  std::vector<double> noise_variances = {0.0, 0.001};
};

/// One rotation drawn from rotation_set, then i.i.d. Gaussian noise with
/// (mean, variance) drawn from the parameter sets, clamped to [0, 1].
inline Image augment(const Image& img, const AugmentParams& params, std::uint64_t seed) {
  assert(!params.rotation_set.empty());
  rng::Stream s(seed);
  const int rot = params.rotation_set[s.next_below(params.rotation_set.size())];
  assert(rot % 90 == 0);
  const double mean = params.noise_means.empty()
                          ? 0.0
                          : params.noise_means[s.next_below(params.noise_means.size())];
  const double var = params.noise_variances.empty()
                         ? 0.0
                         : params.noise_variances[s.next_below(params.noise_variances.size())];
  assert(var >= 0.0);

  Image out = rotate90(img, rot / 90);
  if (mean == 0.0 && var == 0.0) return out;
  const double sd = std::sqrt(var);
  for (double& v : out.data) {
    v += mean + (sd > 0.0 ? sd * s.next_normal() : 0.0);
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

enum class SynthKind { kCheckerboard, kGradient, kBlobs, kPiecewise };

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::kCheckerboard: return "checkerboard";
    case SynthKind::kGradient: return "gradient";
    case SynthKind::kBlobs: return "blobs";
    case SynthKind::kPiecewise: return "piecewise";
  }
  return "?";
}

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "checkerboard") return SynthKind::kCheckerboard;
  if (s == "gradient") return SynthKind::kGradient;
  if (s == "blobs") return SynthKind::kBlobs;
  if (s == "piecewise") return SynthKind::kPiecewise;
  throw UnsupportedFormat("unknown synthetic image kind: " + s);
}

namespace detail {

// Affine rescale onto [0.1, 0.9] so synthetic images stay well away from the
// log-domain floor on both sides.
inline void rescale_span(Image& img) {
  const double lo = min_value(img), hi = max_value(img);
  assert(hi > lo);
  for (double& v : img.data) v = 0.1 + 0.8 * (v - lo) / (hi - lo);
}

}  // namespace detail

/// Deterministic synthetic test image; intensities span [0.1, 0.9].
inline Image synth_image(SynthKind kind, int size, std::uint64_t seed) {
  if (size < 4) throw SizeTooSmall("synth_image: size must be >= 4, got " + std::to_string(size));
  Image out(size, size);
  rng::Stream s(rng::derive(seed, {static_cast<std::uint64_t>(kind)}));

  switch (kind) {
    case SynthKind::kCheckerboard: {
      const int cell = size / 4;  // 4x4 cells, top-left dark
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          out.at(y, x) = (((x / cell) + (y / cell)) % 2 == 0) ? 0.1 : 0.9;
      return out;
    }
    case SynthKind::kGradient: {
      for (int x = 0; x < size; ++x) {
        const double v = 0.1 + 0.8 * static_cast<double>(x) / (size - 1);
        for (int y = 0; y < size; ++y) out.at(y, x) = v;
      }
      return out;
    }
    case SynthKind::kBlobs: {
      const int nblobs = 3 + static_cast<int>(s.next_below(4));
      for (int b = 0; b < nblobs; ++b) {
        const double cx = s.next_unit() * (size - 1);
        const double cy = s.next_unit() * (size - 1);
        const double sigma = size * (1.0 / 12.0 + s.next_unit() * (1.0 / 5.0 - 1.0 / 12.0));
        const double amp = 0.3 + 0.5 * s.next_unit();
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            out.at(y, x) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
          }
      }
      detail::rescale_span(out);
      return out;
    }
    case SynthKind::kPiecewise: {
      const int nrect = 4 + static_cast<int>(s.next_below(4));
      for (double& v : out.data) v = 0.0;
      for (int r = 0; r < nrect; ++r) {
        const int x0 = static_cast<int>(s.next_below(static_cast<std::uint64_t>(size - 2)));
        const int y0 = static_cast<int>(s.next_below(static_cast<std::uint64_t>(size - 2)));
        const int w = 2 + static_cast<int>(s.next_below(static_cast<std::uint64_t>(size - x0 - 1)));
        const int h = 2 + static_cast<int>(s.next_below(static_cast<std::uint64_t>(size - y0 - 1)));
        const double v = 0.1 * (1 + static_cast<int>(s.next_below(9)));
        for (int y = y0; y < std::min(size, y0 + h); ++y)
          for (int x = x0; x < std::min(size, x0 + w); ++x) out.at(y, x) = v;
      }
      if (max_value(out) - min_value(out) < 1e-9) out.at(0, 0) += 0.5;  // degenerate draw
      detail::rescale_span(out);
      return out;
    }
  }
  throw UnsupportedFormat("synth_image: bad kind");
}

}  // namespace despeckle
