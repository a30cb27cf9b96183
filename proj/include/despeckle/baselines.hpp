#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"

namespace despeckle {

// ---------------------------------------------------------------------------
// SRAD: speckle reducing anisotropic diffusion.
//
// Explicit scheme I{n+1} = I{n} + (dt/4) div(c(q) grad I) on the 4-neighbor
// stencil with mirror boundaries. The conductivity depends on the local
// instantaneous coefficient of variation q, built from normalized first and
// second differences, so homogeneous speckle diffuses while edges (high q)
// block the flux. Edge conductances are shared by the two cells meeting at an
// edge, which makes the fluxes antisymmetric: total intensity is conserved
// and each update is a convex combination of the 5-point stencil for
// dt <= 0.25.
// ---------------------------------------------------------------------------

struct SradConfig {
  int iterations = 100;
  double dt = 0.05;  // explicit-scheme stability requires dt <= 0.25
  double rho = 1.0;  // speckle-scale decay rate
  double q0 = 1.0;   // initial speckle scale
};

inline Image srad(const Image& image, const SradConfig& cfg) {
  if (!(cfg.dt > 0.0) || cfg.dt > 0.25)
    throw UnstableStep("srad: dt must lie in (0, 0.25], got " + std::to_string(cfg.dt));
  if (!(cfg.q0 > 0.0)) throw UnstableStep("srad: q0 must be positive");
  if (min_value(image) <= 0.0)
    throw NonPositivePixels("srad: image has non-positive pixels; apply clamp_floor first");

  const int w = image.width, h = image.height;
  Image cur = image;
  Image next(w, h);
  std::vector<double> cond(static_cast<std::size_t>(w) * h);

  auto ref = [&](const Image& im, int y, int x) {  // mirror boundary
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    return im.at(y, x);
  };

  for (int n = 0; n < cfg.iterations; ++n) {
    const double qt = cfg.q0 * std::exp(-cfg.rho * n * cfg.dt);
    const double qt2 = qt * qt;

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = cur.at(y, x);
        const double dr = ref(cur, y, x + 1) - v;
        const double dl = ref(cur, y, x - 1) - v;
        const double dd = ref(cur, y + 1, x) - v;
        const double du = ref(cur, y - 1, x) - v;
        const double g2n = (dr * dr + dl * dl + dd * dd + du * du) / (v * v);
        const double lapn = (dr + dl + dd + du) / v;
        const double den = 1.0 + 0.25 * lapn;
        double q2 = 0.0;
        if (den * den > 1e-300)
          q2 = std::max(0.0, (0.5 * g2n - lapn * lapn / 16.0) / (den * den));
        const double c = 1.0 / (1.0 + (q2 - qt2) / (qt2 * (1.0 + qt2)));
        cond[static_cast<std::size_t>(y) * w + x] = std::clamp(c, 0.0, 1.0);
      }

    auto cref = [&](int y, int x) {
      y = y < 0 ? 0 : (y >= h ? h - 1 : y);
      x = x < 0 ? 0 : (x >= w ? w - 1 : x);
      return cond[static_cast<std::size_t>(y) * w + x];
    };

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = cur.at(y, x);
        const double own = cref(y, x);
        // Right/down edges carry the neighbor's conductance, left/up carry
        // our own, so both cells on an edge agree on its weight.
        const double flux = cref(y, x + 1) * (ref(cur, y, x + 1) - v) +
                            own * (ref(cur, y, x - 1) - v) +
                            cref(y + 1, x) * (ref(cur, y + 1, x) - v) +
                            own * (ref(cur, y - 1, x) - v);
        next.at(y, x) = v + 0.25 * cfg.dt * flux;
      }
    std::swap(cur, next);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Non-local means.
// ---------------------------------------------------------------------------

struct NlmConfig {
  int patch_radius = 2;
  int search_radius = 5;
  double h = 0.1;        // filtering strength
  double sigma2 = 0.0;   // noise compensation subtracted from patch distances
};

/// Weighted average over the search window, weights from mean squared patch
/// differences; the self weight is set to the largest non-self weight.
inline Image nlmeans(const Image& image, const NlmConfig& cfg) {
  const int pr = cfg.patch_radius, sr = cfg.search_radius;
  const int need = 2 * (pr + sr);
  if (image.width <= need || image.height <= need)
    throw ImageTooSmall("nlmeans: image must exceed " + std::to_string(need) +
                        " pixels per side, got " + std::to_string(image.width) + "x" +
                        std::to_string(image.height));
  const int w = image.width, h = image.height;
  const double inv_h2 = 1.0 / (cfg.h * cfg.h);
  const double patch_norm = 1.0 / ((2 * pr + 1) * (2 * pr + 1));

  auto reflect = [](int p, int len) {
    if (p < 0) return -p;
    if (p >= len) return 2 * len - 2 - p;
    return p;
  };

  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, wsum = 0.0, wmax = 0.0;
      for (int ky = -sr; ky <= sr; ++ky)
        for (int kx = -sr; kx <= sr; ++kx) {
          if (ky == 0 && kx == 0) continue;
          double d2 = 0.0;
          for (int py = -pr; py <= pr; ++py) {
            const int y1 = reflect(y + py, h);
            const int y2 = reflect(y + ky + py, h);
            for (int px = -pr; px <= pr; ++px) {
              const double diff =
                  image.at(y1, reflect(x + px, w)) - image.at(y2, reflect(x + kx + px, w));
              d2 += diff * diff;
            }
          }
          d2 *= patch_norm;
          const double wgt = std::exp(-std::max(d2 - 2.0 * cfg.sigma2, 0.0) * inv_h2);
          acc += wgt * image.at(reflect(y + ky, h), reflect(x + kx, w));
          wsum += wgt;
          wmax = std::max(wmax, wgt);
        }
      if (wmax == 0.0) wmax = 1.0;  // isolated pixel; fall back to identity weight
      acc += wmax * image.at(y, x);
      wsum += wmax;
      out.at(y, x) = acc / wsum;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Lee filter.
// ---------------------------------------------------------------------------

struct LeeConfig {
  int window_radius = 3;
  double noise_variance_estimate = 0.0;  // relative speckle variance (alpha^2)
};

/// out = mean + k (center - mean), k = var / (var + est * mean^2) in [0, 1],
/// window statistics over (2r+1)^2 mirror-padded neighborhoods.
inline Image lee(const Image& image, const LeeConfig& cfg) {
  const int r = cfg.window_radius;
  const int w = image.width, h = image.height;
  auto reflect = [](int p, int len) {  // robust for windows wider than the image
    if (len == 1) return 0;
    while (p < 0 || p >= len) {
      if (p < 0) p = -p;
      if (p >= len) p = 2 * len - 2 - p;
    }
    return p;
  };
  Image out(w, h);
  const double inv_n = 1.0 / ((2 * r + 1) * (2 * r + 1));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0, s2 = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double v = image.at(reflect(y + dy, h), reflect(x + dx, w));
          s += v;
          s2 += v * v;
        }
      const double mean = s * inv_n;
      const double var = std::max(0.0, s2 * inv_n - mean * mean);
      const double denom = var + cfg.noise_variance_estimate * mean * mean;
      const double k = denom > 0.0 ? std::clamp(var / denom, 0.0, 1.0) : 1.0;
      out.at(y, x) = mean + k * (image.at(y, x) - mean);
    }
  return out;
}

}  // namespace despeckle
