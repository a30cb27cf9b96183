#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"
#include "despeckle/nn.hpp"
#include "despeckle/parallel.hpp"
#include "despeckle/rng.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

struct TrainMeta {
  int epochs = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  std::uint64_t seed = 0;
};

/// A trained denoiser: the network plus the schedule it was conditioned on.
struct DenoiserModel {
  DenoiserNet net;
  NoiseSchedule schedule;
  TrainMeta meta;
};

struct TrainConfig {
  int epochs = 100;
  int timesteps = 200;
  double alpha_min = 0.005;
  double alpha_max = 0.5;
  int patch_size = 64;
  int batch_size = 16;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  AugmentParams augment_params;
  double val_fraction = 0.1;
  int workers = 0;  // 0 = hardware concurrency; never affects results
  bool variance_matched = false;
  DenoiserConfig arch;
};

struct TraceRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  DenoiserModel model;
  std::vector<TraceRow> trace;
};

namespace detail {

// Fixed tags for the deterministic seed tree. Every random decision in
// training is a pure function of (seed, epoch, step, slot, tag), so traces
// are byte-identical for any worker count.
inline constexpr std::uint64_t kTagSplit = 1;
inline constexpr std::uint64_t kTagInit = 2;
inline constexpr std::uint64_t kTagImage = 3;
inline constexpr std::uint64_t kTagAugment = 4;
inline constexpr std::uint64_t kTagCrop = 5;
inline constexpr std::uint64_t kTagStep = 6;
inline constexpr std::uint64_t kTagNoise = 7;
inline constexpr std::uint64_t kTagVal = 8;

}  // namespace detail

/// One training sample: the clean patch, its log-domain corruption, the step
/// index drawn for it and the seed the corruption used.
struct TrainSample {
  Image clean;
  Image noisy;
  int t = 0;
  std::uint64_t corrupt_seed = 0;
};

/// Draws the training sample for (epoch, step, slot) deterministically:
/// pick an image, augment, crop a patch, draw t uniformly from {1..T}, and
/// corrupt with corrupt_log at alpha_t.
inline TrainSample draw_train_sample(const std::vector<Image>& train_images,
                                     const TrainConfig& cfg, const NoiseSchedule& schedule,
                                     int epoch, int step, int slot) {
  const std::uint64_t base =
      rng::derive(cfg.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                             static_cast<std::uint64_t>(slot)});
  const std::size_t idx = static_cast<std::size_t>(rng::derive(base, {detail::kTagImage}) %
                                                   train_images.size());
  const Image aug =
      augment(train_images[idx], cfg.augment_params, rng::derive(base, {detail::kTagAugment}));
  TrainSample s;
  s.clean = clamp_floor(crop_patch(aug, cfg.patch_size, rng::derive(base, {detail::kTagCrop})),
                        kIntensityFloor);
  s.t = 1 + static_cast<int>(rng::derive(base, {detail::kTagStep}) %
                             static_cast<std::uint64_t>(schedule.steps()));
  s.corrupt_seed = rng::derive(base, {detail::kTagNoise});
  s.noisy = corrupt_log(s.clean, schedule.alpha_at(s.t), s.corrupt_seed);
  return s;
}

/// Trains a denoiser: per step, sample a batch of corrupted patches, take the
/// mean MSE gradient against the clean patches, and apply SGD with the
/// stepwise-decayed learning rate. Returns the model and a per-epoch trace of
/// (train loss, validation loss, lr). Fully deterministic given the seed.
inline TrainResult train(const std::vector<Image>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw EmptyDataset("train: dataset is empty");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  {
    DenoiserNet probe;
    probe.cfg = cfg.arch;
    if (cfg.patch_size < probe.min_input_dim())
      throw ConfigError("train: patch_size " + std::to_string(cfg.patch_size) +
                        " below the architecture's minimum input dimension " +
                        std::to_string(probe.min_input_dim()));
  }
  for (const Image& img : dataset)
    if (img.width < cfg.patch_size || img.height < cfg.patch_size)
      throw PatchTooLarge("train: image " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " smaller than patch size " +
                          std::to_string(cfg.patch_size));

  const NoiseSchedule schedule =
      cfg.variance_matched ? variance_matched_schedule(cfg.alpha_min, cfg.alpha_max, cfg.timesteps)
                           : linear_schedule(cfg.alpha_min, cfg.alpha_max, cfg.timesteps);

  // Seeded shuffle; the first val_fraction of the permutation is held out.
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  {
    rng::Stream s(rng::derive(cfg.seed, {detail::kTagSplit}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[s.next_below(i)]);
  }
  const std::size_t val_count = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(dataset.size())));
  std::vector<Image> val_images, train_images;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < val_count ? val_images : train_images).push_back(dataset[order[i]]);
  // With nothing held out (tiny datasets) validation reuses the training
  // images under its own seed stream: fresh crops and fresh noise draws.
  const std::vector<Image>& val_source = val_images.empty() ? train_images : val_images;

  TrainResult result;
  result.model.schedule = schedule;
  result.model.net =
      DenoiserNet::init(cfg.arch, cfg.timesteps, rng::derive(cfg.seed, {detail::kTagInit}));
  DenoiserNet& net = result.model.net;

  const int steps_per_epoch =
      static_cast<int>((train_images.size() + cfg.batch_size - 1) / cfg.batch_size);
  const int batch = cfg.batch_size;

  std::vector<GradBuffer> sample_grads;
  std::vector<double> sample_loss(static_cast<std::size_t>(batch), 0.0);
  for (int b = 0; b < batch; ++b) sample_grads.push_back(GradBuffer::zeros_like(net));
  GradBuffer total = GradBuffer::zeros_like(net);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.sgd, epoch);
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      parallel_for(static_cast<std::size_t>(batch), cfg.workers, [&](std::size_t b) {
        const TrainSample s = draw_train_sample(train_images, cfg, schedule, epoch, step,
                                                static_cast<int>(b));
        sample_grads[b].zero();
        sample_loss[b] =
            loss_and_grad(net, s.noisy, s.clean, schedule.alphas, sample_grads[b]);
      });
      total.zero();
      double step_loss = 0.0;
      for (int b = 0; b < batch; ++b) {  // fixed reduction order
        total.add(sample_grads[static_cast<std::size_t>(b)]);
        step_loss += sample_loss[static_cast<std::size_t>(b)];
      }
      total.scale(1.0 / batch);
      sgd_step(net, total, lr);
      epoch_loss += step_loss / batch;
    }
    epoch_loss /= steps_per_epoch;

    double val_loss = 0.0;
    {
      std::vector<double> per(val_source.size(), 0.0);
      parallel_for(val_source.size(), cfg.workers, [&](std::size_t i) {
        const std::uint64_t base = rng::derive(
            cfg.seed, {detail::kTagVal, static_cast<std::uint64_t>(epoch), i});
        const Image patch = clamp_floor(
            crop_patch(val_source[i], cfg.patch_size, rng::derive(base, {detail::kTagCrop})),
            kIntensityFloor);
        const int t = 1 + static_cast<int>(rng::derive(base, {detail::kTagStep}) %
                                           static_cast<std::uint64_t>(schedule.steps()));
        const Image noisy =
            corrupt_log(patch, schedule.alpha_at(t), rng::derive(base, {detail::kTagNoise}));
        per[i] = loss_only(net, noisy, patch, schedule.alphas);
      });
      for (double v : per) val_loss += v;
      val_loss /= static_cast<double>(val_source.size());
    }

    result.trace.push_back({epoch, epoch_loss, val_loss, lr});
  }

  result.model.meta.epochs = cfg.epochs;
  result.model.meta.final_train_loss = result.trace.back().train_loss;
  result.model.meta.final_val_loss = result.trace.back().val_loss;
  result.model.meta.seed = cfg.seed;
  return result;
}

/// Single-step denoising: one network prediction, clamped into [floor, 1].
/// No step index is supplied; the model conditions on its schedule only.
inline Image denoise(const DenoiserModel& model, const Image& noisy) {
  if (noisy.width < model.net.min_input_dim() || noisy.height < model.net.min_input_dim())
    throw ImageTooSmall("denoise: input " + std::to_string(noisy.width) + "x" +
                        std::to_string(noisy.height) + " below minimum dimension " +
                        std::to_string(model.net.min_input_dim()));
  return clamp_range(forward(model.net, noisy, model.schedule.alphas));
}

/// Experimental iterative variant: walk the learned Gaussian transitions from
/// t_start down to 2, sampling each intermediate log-image; the last step
/// returns the posterior mean. Starts from the given noisy image (the chain
/// has no pure-noise endpoint under a signal-dependent model).
inline Image ancestral_denoise(const DenoiserModel& model, const Image& noisy, int t_start,
                               std::uint64_t seed) {
  const NoiseSchedule& sched = model.schedule;
  if (t_start < 2 || t_start > sched.steps())
    throw IndexOutOfRange("ancestral_denoise: t_start=" + std::to_string(t_start) +
                          " outside [2, " + std::to_string(sched.steps()) + "]");
  if (noisy.width < model.net.min_input_dim() || noisy.height < model.net.min_input_dim())
    throw ImageTooSmall("ancestral_denoise: input below minimum dimension");

  Image cur = clamp_range(noisy);
  for (int t = t_start; t >= 2; --t) {
    const Image pred = forward(model.net, cur, sched.alphas);
    const double a = sched.alpha_at(t - 1);
    const double d = sched.delta_at(t);
    const double a2 = a * a, d2 = d * d;
    const double sigma_q = std::sqrt(a2 * d2 / (a2 + d2));
    rng::Stream noise(rng::derive(seed, {static_cast<std::uint64_t>(t)}));
    Image next(cur.width, cur.height);
    for (std::size_t i = 0; i < cur.data.size(); ++i) {
      const double log_it = std::log(cur.data[i]);
      const double log_f = std::log(std::max(pred.data[i], kIntensityFloor));
      const double mu = (a2 * log_it + d2 * log_f) / (a2 + d2);
      const double log_prev = t > 2 ? mu + sigma_q * noise.next_normal() : mu;
      next.data[i] = std::clamp(std::exp(log_prev), kIntensityFloor, 1.0);
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace despeckle
