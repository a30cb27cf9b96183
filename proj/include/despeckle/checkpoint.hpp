#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/sddpm.hpp"

namespace despeckle {

// Checkpoint container, little-endian binary (layout documented in README):
//   magic "DSPKLCP1" | u32 version | u8 shallow | u32 base_ch | u32 mid_ch |
//   f64 leaky_slope | u32 timesteps | f64 alpha_min | f64 alpha_max |
//   u8 schedule_kind | u32 epochs | f64 train_loss | f64 val_loss |
//   u64 seed | u64 n_params | f64 params[n_params]
inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'P', 'K', 'L', 'C', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > in.size())
    throw TruncatedData("checkpoint truncated at byte " + std::to_string(pos) + " in " + path);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const DenoiserModel& model, const std::string& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint8_t>(out, model.net.cfg.shallow ? 1 : 0);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.net.cfg.base_channels));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.net.cfg.mid_channels));
  detail::put<double>(out, model.net.cfg.leaky_slope);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.net.timesteps));
  detail::put<double>(out, model.schedule.alphas.front());
  detail::put<double>(out, model.schedule.alphas.back());
  detail::put<std::uint8_t>(out, model.schedule.uniform_delta ? 0 : 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.meta.epochs));
  detail::put<double>(out, model.meta.final_train_loss);
  detail::put<double>(out, model.meta.final_val_loss);
  detail::put<std::uint64_t>(out, model.meta.seed);
  detail::put<std::uint64_t>(out, model.net.param_count());
  for (const Tensor& t : model.net.params)
    for (double v : t.data) detail::put<double>(out, v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoFailure("short write to checkpoint " + path);
}

inline DenoiserModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open checkpoint for reading: " + path);
  std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
  if (in.size() < 8 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointMismatch("not a checkpoint file (bad magic): " + path);
  std::size_t pos = 8;
  const auto version = detail::take<std::uint32_t>(in, pos, path);
  if (version != kCheckpointVersion)
    throw CheckpointMismatch("checkpoint version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kCheckpointVersion) +
                             ") in " + path);

  DenoiserModel model;
  DenoiserConfig cfg;
  cfg.shallow = detail::take<std::uint8_t>(in, pos, path) != 0;
  cfg.base_channels = static_cast<int>(detail::take<std::uint32_t>(in, pos, path));
  cfg.mid_channels = static_cast<int>(detail::take<std::uint32_t>(in, pos, path));
  cfg.leaky_slope = detail::take<double>(in, pos, path);
  const int timesteps = static_cast<int>(detail::take<std::uint32_t>(in, pos, path));
  const double alpha_min = detail::take<double>(in, pos, path);
  const double alpha_max = detail::take<double>(in, pos, path);
  const auto schedule_kind = detail::take<std::uint8_t>(in, pos, path);
  model.meta.epochs = static_cast<int>(detail::take<std::uint32_t>(in, pos, path));
  model.meta.final_train_loss = detail::take<double>(in, pos, path);
  model.meta.final_val_loss = detail::take<double>(in, pos, path);
  model.meta.seed = detail::take<std::uint64_t>(in, pos, path);

  model.schedule = schedule_kind == 0 ? linear_schedule(alpha_min, alpha_max, timesteps)
                                      : variance_matched_schedule(alpha_min, alpha_max, timesteps);
  model.net = DenoiserNet::init(cfg, timesteps, 0, true);

  const auto n_params = detail::take<std::uint64_t>(in, pos, path);
  if (n_params != model.net.param_count())
    throw CheckpointMismatch("checkpoint parameter count " + std::to_string(n_params) +
                             " does not match architecture (" +
                             std::to_string(model.net.param_count()) + ") in " + path);
  for (Tensor& t : model.net.params)
    for (double& v : t.data) v = detail::take<double>(in, pos, path);
  return model;
}

}  // namespace despeckle
