#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"

namespace despeckle {

/// Peak signal-to-noise ratio in dB: 10 log10(i_max^2 / MSE), with MSE the
/// pixel-mean squared difference. Identical images return +infinity.
inline double psnr(const Image& reference, const Image& test, double i_max = 1.0) {
  if (!reference.same_shape(test))
    throw ShapeMismatch("psnr: " + std::to_string(reference.width) + "x" +
                        std::to_string(reference.height) + " vs " + std::to_string(test.width) +
                        "x" + std::to_string(test.height));
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    const double d = reference.data[i] - test.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(reference.pixel_count());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(i_max * i_max / mse);
}

struct SsimConfig {
  enum class Window { kGaussian11, kUniform8 };
  Window window = Window::kGaussian11;  // 11x11, sigma 1.5
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

struct SsimWindow {
  int size = 0;
  std::vector<double> weights;  // normalized, size*size
};

inline SsimWindow make_ssim_window(SsimConfig::Window kind) {
  SsimWindow w;
  if (kind == SsimConfig::Window::kUniform8) {
    w.size = 8;
    w.weights.assign(64, 1.0 / 64.0);
    return w;
  }
  w.size = 11;
  w.weights.resize(121);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const double dy = y - 5, dx = x - 5;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w.weights[static_cast<std::size_t>(y) * 11 + x] = g;
      sum += g;
    }
  for (double& v : w.weights) v /= sum;
  return w;
}

}  // namespace detail

/// Mean structural similarity over all fully-interior window positions.
/// Symmetric in its arguments; range [-1, 1].
inline double ssim(const Image& reference, const Image& test, const SsimConfig& cfg = {}) {
  if (!reference.same_shape(test))
    throw ShapeMismatch("ssim: image shapes differ");
  const detail::SsimWindow win = detail::make_ssim_window(cfg.window);
  if (reference.width < win.size || reference.height < win.size)
    throw ImageTooSmall("ssim: image " + std::to_string(reference.width) + "x" +
                        std::to_string(reference.height) + " smaller than " +
                        std::to_string(win.size) + "x" + std::to_string(win.size) + " window");
  const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
  const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;

  double total = 0.0;
  long positions = 0;
  for (int oy = 0; oy + win.size <= reference.height; ++oy) {
    for (int ox = 0; ox + win.size <= reference.width; ++ox) {
      double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      std::size_t wi = 0;
      for (int y = 0; y < win.size; ++y)
        for (int x = 0; x < win.size; ++x, ++wi) {
          const double wgt = win.weights[wi];
          const double a = reference.at(oy + y, ox + x);
          const double b = test.at(oy + y, ox + x);
          mx += wgt * a;
          my += wgt * b;
          sxx += wgt * a * a;
          syy += wgt * b * b;
          sxy += wgt * a * b;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cov = sxy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

}  // namespace despeckle
