#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"
#include "despeckle/rng.hpp"

namespace despeckle {

/// Ordered noise levels alpha_1..alpha_T (standard deviations in the log
/// domain) plus the per-step increment delta. The linear schedule has a
/// constant delta; the variance-matched variant does not, so delta_at(t)
/// should be used wherever a per-step increment is needed.
struct NoiseSchedule {
  std::vector<double> alphas;
  double delta = 0.0;
  bool uniform_delta = true;

  int steps() const { return static_cast<int>(alphas.size()); }

  /// alpha_t for 1-based step index t.
  double alpha_at(int t) const {
    if (t < 1 || t > steps())
      throw IndexOutOfRange("alpha_at: t=" + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
    return alphas[static_cast<std::size_t>(t - 1)];
  }

  /// Increment alpha_t - alpha_{t-1} for 2 <= t <= T.
  double delta_at(int t) const {
    if (t < 2 || t > steps())
      throw IndexOutOfRange("delta_at: t=" + std::to_string(t) + " outside [2, " +
                            std::to_string(steps()) + "]");
    return uniform_delta ? delta
                         : alphas[static_cast<std::size_t>(t - 1)] -
                               alphas[static_cast<std::size_t>(t - 2)];
  }
};

/// alpha_t = alpha_min + (t-1) * (alpha_max - alpha_min) / (T-1).
/// Endpoints are pinned exactly; the increment is constant.
inline NoiseSchedule linear_schedule(double alpha_min, double alpha_max, int timesteps) {
  if (!(alpha_min > 0.0) || !(alpha_min < alpha_max) || !(alpha_max < 1.0))
    throw InvalidRange("linear_schedule: need 0 < alpha_min < alpha_max < 1, got [" +
                       std::to_string(alpha_min) + ", " + std::to_string(alpha_max) + "]");
  if (timesteps < 2)
    throw TooFewSteps("linear_schedule: T must be >= 2, got " + std::to_string(timesteps));
  NoiseSchedule s;
  s.delta = (alpha_max - alpha_min) / (timesteps - 1);
  s.uniform_delta = true;
  s.alphas.resize(static_cast<std::size_t>(timesteps));
  for (int t = 1; t <= timesteps; ++t)
    s.alphas[static_cast<std::size_t>(t - 1)] = alpha_min + (t - 1) * s.delta;
  s.alphas.front() = alpha_min;
  s.alphas.back() = alpha_max;
  return s;
}

/// Non-default alternative with alpha_t^2 = alpha_{t-1}^2 + delta_t^2, i.e.
/// alpha^2 spaced linearly, so variances (not standard deviations) add along
/// the chain of single-step transitions. Increments are non-uniform.
inline NoiseSchedule variance_matched_schedule(double alpha_min, double alpha_max, int timesteps) {
  if (!(alpha_min > 0.0) || !(alpha_min < alpha_max) || !(alpha_max < 1.0))
    throw InvalidRange("variance_matched_schedule: need 0 < alpha_min < alpha_max < 1");
  if (timesteps < 2)
    throw TooFewSteps("variance_matched_schedule: T must be >= 2, got " +
                      std::to_string(timesteps));
  NoiseSchedule s;
  s.uniform_delta = false;
  s.alphas.resize(static_cast<std::size_t>(timesteps));
  const double v0 = alpha_min * alpha_min, v1 = alpha_max * alpha_max;
  for (int t = 1; t <= timesteps; ++t)
    s.alphas[static_cast<std::size_t>(t - 1)] =
        std::sqrt(v0 + (t - 1) * (v1 - v0) / (timesteps - 1));
  s.alphas.front() = alpha_min;
  s.alphas.back() = alpha_max;
  s.delta = s.alphas[1] - s.alphas[0];  // first increment, for reference only
  return s;
}

/// I_t = I_0 * (1 + alpha * eps), eps ~ N(0, 1) i.i.d. per pixel, clamped to
/// [floor, 1]. This is the physical signal-dependent model and is what
/// evaluation-time corruption uses.
inline Image corrupt_multiplicative(const Image& image, double alpha, std::uint64_t seed,
                                    double floor_value = kIntensityFloor) {
  if (alpha < 0.0)
    throw NegativeAlpha("corrupt_multiplicative: alpha must be >= 0, got " +
                        std::to_string(alpha));
  if (alpha == 0.0) return image;
  Image out = image;
  rng::Stream s(seed);
  for (double& v : out.data) {
    v *= 1.0 + alpha * s.next_normal();
    v = std::clamp(v, floor_value, 1.0);
  }
  return out;
}

/// I_t = exp(log I_0 + alpha * eps), the log-additive form used during
/// training. Same seed as corrupt_multiplicative yields the same eps field,
/// which keeps the gap between the two kernels directly measurable.
inline Image corrupt_log(const Image& image, double alpha, std::uint64_t seed,
                         double floor_value = kIntensityFloor) {
  if (alpha < 0.0)
    throw NegativeAlpha("corrupt_log: alpha must be >= 0, got " + std::to_string(alpha));
  if (alpha == 0.0) return image;
  Image out = image;
  rng::Stream s(seed);
  for (double& v : out.data) {
    v *= std::exp(alpha * s.next_normal());
    v = std::clamp(v, floor_value, 1.0);
  }
  return out;
}

/// Kernel behind single_step: log I_t = log I_{t-1} + sigma * eps.
inline Image log_additive_step(const Image& prev, double sigma, std::uint64_t seed,
                               double floor_value = kIntensityFloor) {
  if (sigma == 0.0) return prev;
  Image out = prev;
  rng::Stream s(seed);
  for (double& v : out.data) {
    v *= std::exp(sigma * s.next_normal());
    v = std::clamp(v, floor_value, 1.0);
  }
  return out;
}

/// One forward transition under the schedule's constant increment.
inline Image single_step(const Image& image_prev, const NoiseSchedule& schedule,
                         std::uint64_t seed) {
  assert(schedule.uniform_delta);
  return log_additive_step(image_prev, schedule.delta, seed);
}

/// Gaussian posterior of log I_{t-1} given (log I_t, log I_0): the mean is a
/// convex combination of the two conditionals' means and the variance is
/// their harmonic-mean combination, shared across pixels for a given t.
struct PosteriorParams {
  double mu_q = 0.0;
  double sigma_q2 = 0.0;
};

inline PosteriorParams posterior_params(const NoiseSchedule& schedule, int t, double log_it,
                                        double log_i0) {
  if (t < 2 || t > schedule.steps())
    throw IndexOutOfRange("posterior_params: t=" + std::to_string(t) + " outside [2, " +
                          std::to_string(schedule.steps()) + "]");
  const double a = schedule.alpha_at(t - 1);
  const double d = schedule.delta_at(t);
  const double a2 = a * a, d2 = d * d;
  PosteriorParams p;
  p.sigma_q2 = a2 * d2 / (a2 + d2);
  p.mu_q = (a2 * log_it + d2 * log_i0) / (a2 + d2);
  return p;
}

/// log N(v; mean, var) with the normalizing constant included.
inline double gaussian_log_pdf(double v, double mean, double var) {
  assert(var > 0.0);
  const double two_pi = 6.283185307179586476925286766559;
  return -0.5 * std::log(two_pi * var) - (v - mean) * (v - mean) / (2.0 * var);
}

/// Log of the Bayes numerator N(log I_t; x, delta_t^2) * N(x; log I_0,
/// alpha_{t-1}^2) evaluated at candidate x = log I_{t-1}. Up to a constant in
/// x this equals log N(x; mu_q, sigma_q2).
inline double posterior_log_density_unnormalized(const NoiseSchedule& schedule, int t, double x,
                                                 double log_it, double log_i0) {
  if (t < 2 || t > schedule.steps())
    throw IndexOutOfRange("posterior_log_density_unnormalized: t=" + std::to_string(t) +
                          " outside [2, " + std::to_string(schedule.steps()) + "]");
  const double a = schedule.alpha_at(t - 1);
  const double d = schedule.delta_at(t);
  return gaussian_log_pdf(log_it, x, d * d) + gaussian_log_pdf(x, log_i0, a * a);
}

}  // namespace despeckle
