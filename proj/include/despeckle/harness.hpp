#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "despeckle/baselines.hpp"
#include "despeckle/checkpoint.hpp"
#include "despeckle/csv.hpp"
#include "despeckle/errors.hpp"
#include "despeckle/image_io.hpp"
#include "despeckle/metrics.hpp"
#include "despeckle/parallel.hpp"
#include "despeckle/sddpm.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

namespace fs = std::filesystem;

/// Global seed fallback: DESPECKLE_SEED, else 0.
inline std::uint64_t default_seed() {
  if (const char* env = std::getenv("DESPECKLE_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

// ---------------------------------------------------------------------------
// Flat JSON configs. Unknown keys are hard errors so typos never pass
// silently; missing required keys are reported by name.
// ---------------------------------------------------------------------------

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string origin) : j_(j), origin_(std::move(origin)) {
    if (!j_.is_object()) throw ConfigError(origin_ + ": top level must be a JSON object");
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(origin_ + ": missing required key \"" + key + "\"");
    seen_.insert(key);
    return get<T>(key);
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    seen_.insert(key);
    return get<T>(key);
  }

  bool has(const std::string& key) {
    if (j_.contains(key)) {
      seen_.insert(key);
      return true;
    }
    return false;
  }

  template <typename T>
  T get(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(origin_ + ": key \"" + key + "\" has the wrong type");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(origin_ + ": unknown key \"" + it.key() + "\"");
  }

 private:
  const nlohmann::json& j_;
  std::string origin_;
  std::set<std::string> seen_;
};

inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_json_text(text, path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training run config.
// ---------------------------------------------------------------------------

struct TrainRunConfig {
  std::string dataset_dir;
  std::string output_dir;
  TrainConfig train;
};

inline TrainRunConfig parse_train_config(const nlohmann::json& j, const std::string& origin) {
  detail::JsonReader r(j, origin);
  TrainRunConfig c;
  c.dataset_dir = r.require<std::string>("dataset_dir");
  c.output_dir = r.require<std::string>("output_dir");
  c.train.epochs = r.require<int>("epochs");
  c.train.timesteps = r.optional<int>("timesteps", 200);
  c.train.alpha_min = r.optional<double>("alpha_min", 0.005);
  c.train.alpha_max = r.optional<double>("alpha_max", 0.5);
  c.train.patch_size = r.optional<int>("patch_size", 64);
  c.train.batch_size = r.optional<int>("batch_size", 16);
  c.train.sgd.initial_lr = r.optional<double>("initial_lr", 0.05);
  c.train.sgd.decay_factor = r.optional<double>("decay_factor", 10.0);
  c.train.sgd.decay_every = r.optional<int>("decay_every", 20);
  c.train.seed = r.optional<std::uint64_t>("seed", default_seed());
  c.train.val_fraction = r.optional<double>("val_fraction", 0.1);
  c.train.workers = r.optional<int>("workers", 0);
  c.train.variance_matched = r.optional<bool>("variance_matched", false);
  c.train.arch.base_channels = r.optional<int>("base_channels", 16);
  c.train.arch.mid_channels = r.optional<int>("mid_channels", 32);
  c.train.arch.leaky_slope = r.optional<double>("leaky_slope", 0.1);
  c.train.arch.shallow = r.optional<bool>("shallow", false);
  c.train.augment_params.rotation_set =
      r.optional<std::vector<int>>("rotations", {0, 90, 180, 270});
  c.train.augment_params.noise_means =
      r.optional<std::vector<double>>("noise_means", {0.0, 0.05});
  c.train.augment_params.noise_variances =
      r.optional<std::vector<double>>("noise_variances", {0.0, 0.001});
  r.finish();
  for (int rot : c.train.augment_params.rotation_set)
    if (rot % 90 != 0)
      throw ConfigError(origin + ": key \"rotations\" must contain right angles, got " +
                        std::to_string(rot));
  if (c.train.epochs < 1) throw ConfigError(origin + ": key \"epochs\" must be >= 1");
  return c;
}

inline nlohmann::json to_json(const TrainRunConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["output_dir"] = c.output_dir;
  j["epochs"] = c.train.epochs;
  j["timesteps"] = c.train.timesteps;
  j["alpha_min"] = c.train.alpha_min;
  j["alpha_max"] = c.train.alpha_max;
  j["patch_size"] = c.train.patch_size;
  j["batch_size"] = c.train.batch_size;
  j["initial_lr"] = c.train.sgd.initial_lr;
  j["decay_factor"] = c.train.sgd.decay_factor;
  j["decay_every"] = c.train.sgd.decay_every;
  j["seed"] = c.train.seed;
  j["val_fraction"] = c.train.val_fraction;
  j["workers"] = c.train.workers;
  j["variance_matched"] = c.train.variance_matched;
  j["base_channels"] = c.train.arch.base_channels;
  j["mid_channels"] = c.train.arch.mid_channels;
  j["leaky_slope"] = c.train.arch.leaky_slope;
  j["shallow"] = c.train.arch.shallow;
  j["rotations"] = c.train.augment_params.rotation_set;
  j["noise_means"] = c.train.augment_params.noise_means;
  j["noise_variances"] = c.train.augment_params.noise_variances;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation run config.
// ---------------------------------------------------------------------------

struct EvalRunConfig {
  std::string dataset_dir;
  std::string output_dir;
  std::vector<std::string> methods;
  std::vector<double> alpha_levels;
  std::uint64_t seed = 0;
  std::string checkpoint;     // required when methods include "sddpm"
  std::string external_csv;   // required when methods include "external"
  bool timing = true;         // false pins wall_time_s to 0 for byte-stable reruns
  int workers = 0;
  SradConfig srad;
  NlmConfig nlm;
  LeeConfig lee;
};

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> k = {"sddpm", "srad", "nlmeans", "lee", "external"};
  return k;
}

inline EvalRunConfig parse_eval_config(const nlohmann::json& j, const std::string& origin) {
  detail::JsonReader r(j, origin);
  EvalRunConfig c;
  c.dataset_dir = r.require<std::string>("dataset_dir");
  c.output_dir = r.require<std::string>("output_dir");
  c.methods = r.require<std::vector<std::string>>("methods");
  c.alpha_levels = r.require<std::vector<double>>("alpha_levels");
  c.seed = r.optional<std::uint64_t>("seed", default_seed());
  c.checkpoint = r.optional<std::string>("checkpoint", "");
  c.external_csv = r.optional<std::string>("external_csv", "");
  c.timing = r.optional<bool>("timing", true);
  c.workers = r.optional<int>("workers", 0);
  c.srad.iterations = r.optional<int>("srad_iterations", 100);
  c.srad.dt = r.optional<double>("srad_dt", 0.05);
  c.srad.rho = r.optional<double>("srad_rho", 1.0);
  c.srad.q0 = r.optional<double>("srad_q0", 1.0);
  c.nlm.patch_radius = r.optional<int>("nlm_patch_radius", 2);
  c.nlm.search_radius = r.optional<int>("nlm_search_radius", 5);
  c.nlm.h = r.optional<double>("nlm_h", 0.1);
  c.nlm.sigma2 = r.optional<double>("nlm_sigma2", 0.0);
  c.lee.window_radius = r.optional<int>("lee_window_radius", 3);
  c.lee.noise_variance_estimate = r.optional<double>("lee_noise_variance", 0.04);
  r.finish();

  if (c.methods.empty()) throw ConfigError(origin + ": key \"methods\" must be non-empty");
  for (const std::string& m : c.methods)
    if (!known_methods().count(m))
      throw ConfigError(origin + ": key \"methods\" holds unknown method \"" + m + "\"");
  if (c.alpha_levels.empty())
    throw ConfigError(origin + ": key \"alpha_levels\" must be non-empty");
  for (double a : c.alpha_levels)
    if (!(a > 0.0) || !(a < 1.0))
      throw ConfigError(origin + ": key \"alpha_levels\" values must lie in (0, 1)");
  return c;
}

inline nlohmann::json to_json(const EvalRunConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["output_dir"] = c.output_dir;
  j["methods"] = c.methods;
  j["alpha_levels"] = c.alpha_levels;
  j["seed"] = c.seed;
  j["checkpoint"] = c.checkpoint;
  j["external_csv"] = c.external_csv;
  j["timing"] = c.timing;
  j["workers"] = c.workers;
  j["srad_iterations"] = c.srad.iterations;
  j["srad_dt"] = c.srad.dt;
  j["srad_rho"] = c.srad.rho;
  j["srad_q0"] = c.srad.q0;
  j["nlm_patch_radius"] = c.nlm.patch_radius;
  j["nlm_search_radius"] = c.nlm.search_radius;
  j["nlm_h"] = c.nlm.h;
  j["nlm_sigma2"] = c.nlm.sigma2;
  j["lee_window_radius"] = c.lee.window_radius;
  j["lee_noise_variance"] = c.lee.noise_variance_estimate;
  return j;
}

// ---------------------------------------------------------------------------
// Report rows (one per method x alpha).
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string method;
  double alpha = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  long n_images = 0;
  double wall_time_s = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

inline std::string report_to_csv(const EvalReport& report) {
  std::string out = "method,alpha,mean_psnr,mean_ssim,n_images,wall_time_s\n";
  for (const EvalRow& r : report.rows) {
    out += r.method + "," + format_g10(r.alpha) + "," + format_f6(r.mean_psnr) + "," +
           format_f6(r.mean_ssim) + "," + std::to_string(r.n_images) + "," +
           format_f6(r.wall_time_s) + "\n";
  }
  return out;
}

inline EvalReport report_from_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != split_csv_line("method,alpha,mean_psnr,mean_ssim,n_images,wall_time_s"))
    throw MalformedHeader("report CSV " + path +
                          " must start with header method,alpha,mean_psnr,mean_ssim,n_images,wall_time_s");
  EvalReport report;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 6)
      throw MalformedHeader("report CSV " + path + " row " + std::to_string(i) + " has " +
                            std::to_string(rows[i].size()) + " fields, want 6");
    EvalRow r;
    r.method = rows[i][0];
    r.alpha = parse_csv_double(rows[i][1]);
    r.mean_psnr = parse_csv_double(rows[i][2]);
    r.mean_ssim = parse_csv_double(rows[i][3]);
    r.n_images = std::stol(rows[i][4]);
    r.wall_time_s = parse_csv_double(rows[i][5]);
    report.rows.push_back(r);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Subcommand implementations. The CLI wires flags onto these.
// ---------------------------------------------------------------------------

/// Noise seed for one evaluation image. Derived from the run seed and the
/// filename only, so every method and every alpha level sees the same
/// underlying noise field (common random numbers).
inline std::uint64_t eval_corruption_seed(std::uint64_t run_seed, const std::string& filename) {
  return rng::derive(run_seed, {0xe7a1u, rng::hash_string(filename)});
}

/// Corrupts every image in input_dir with the chosen kernel and writes PGMs
/// with the same stems plus a manifest CSV. Returns the image count.
inline long cmd_corrupt(const std::string& input_dir, const std::string& output_dir, double alpha,
                        const std::string& kernel, std::uint64_t seed) {
  if (kernel != "multiplicative" && kernel != "log")
    throw ConfigError("corrupt: kernel must be \"multiplicative\" or \"log\", got \"" + kernel +
                      "\"");
  const auto files = list_images(input_dir);
  if (files.empty()) throw EmptyInputDir("corrupt: no .pgm/.png images in " + input_dir);
  fs::create_directories(output_dir);

  std::string manifest = "filename,alpha,kernel,seed\n";
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    const std::uint64_t img_seed = rng::derive(seed, {rng::hash_string(name)});
    const Image in = load_image(path.string());
    const Image out = kernel == "multiplicative" ? corrupt_multiplicative(in, alpha, img_seed)
                                                 : corrupt_log(in, alpha, img_seed);
    const std::string out_name = path.stem().string() + ".pgm";
    save_image(out, (fs::path(output_dir) / out_name).string());
    manifest += out_name + "," + format_g10(alpha) + "," + kernel + "," +
                std::to_string(img_seed) + "\n";
  }
  write_text_file((fs::path(output_dir) / "manifest.csv").string(), manifest);
  return static_cast<long>(files.size());
}

/// Writes the schedule as CSV columns t, alpha_t, delta (10 significant
/// digits).
inline void cmd_schedule(double alpha_min, double alpha_max, int timesteps,
                         const std::string& out_path) {
  const NoiseSchedule s = linear_schedule(alpha_min, alpha_max, timesteps);
  std::string out = "t,alpha_t,delta\n";
  for (int t = 1; t <= s.steps(); ++t)
    out += std::to_string(t) + "," + format_g10(s.alpha_at(t)) + "," + format_g10(s.delta) + "\n";
  write_text_file(out_path, out);
}

inline std::string loss_trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  for (const TraceRow& r : trace)
    out += std::to_string(r.epoch) + "," + format_g10(r.train_loss) + "," +
           format_g10(r.val_loss) + "," + format_g10(r.lr) + "\n";
  return out;
}

/// Trains per the config; writes checkpoint.bin and loss_trace.csv into
/// output_dir and returns the checkpoint path.
inline std::string cmd_train(const TrainRunConfig& cfg, std::ostream& log = std::cout) {
  const auto files = list_images(cfg.dataset_dir);
  if (files.empty()) throw EmptyDataset("train: no .pgm/.png images in " + cfg.dataset_dir);
  std::vector<Image> dataset;
  dataset.reserve(files.size());
  for (const auto& f : files) dataset.push_back(load_image(f.string()));

  const TrainResult result = train(dataset, cfg.train);

  fs::create_directories(cfg.output_dir);
  const std::string ckpt_path = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  save_checkpoint(result.model, ckpt_path);
  write_text_file((fs::path(cfg.output_dir) / "loss_trace.csv").string(),
                  loss_trace_to_csv(result.trace));
  log << "trained " << cfg.train.epochs << " epochs on " << dataset.size() << " images; "
      << "final train loss " << format_g10(result.model.meta.final_train_loss)
      << ", final val loss " << format_g10(result.model.meta.final_val_loss) << "\n";
  log << "checkpoint: " << ckpt_path << "\n";
  return ckpt_path;
}

struct DenoiseOptions {
  std::string method;           // sddpm | srad | nlmeans | lee
  std::string checkpoint_path;  // sddpm only
  SradConfig srad;
  NlmConfig nlm;
  LeeConfig lee;
  int expect_timesteps = 0;        // nonzero: validated against the checkpoint
  double expect_alpha_min = 0.0;   // nonzero: validated against the checkpoint
  double expect_alpha_max = 0.0;
  bool log_timing = true;
};

namespace detail {

inline Image run_method(const std::string& method, const Image& noisy, const DenoiserModel* model,
                        const SradConfig& srad_cfg, const NlmConfig& nlm_cfg,
                        const LeeConfig& lee_cfg) {
  if (method == "sddpm") return denoise(*model, noisy);
  if (method == "srad") return srad(clamp_floor(noisy, kIntensityFloor), srad_cfg);
  if (method == "nlmeans") return nlmeans(noisy, nlm_cfg);
  if (method == "lee") return lee(noisy, lee_cfg);
  throw ConfigError("unknown denoising method \"" + method + "\"");
}

}  // namespace detail

/// Denoises every image in input_dir with one method; logs per-image and
/// total wall time. Returns the image count.
inline long cmd_denoise(const std::string& input_dir, const std::string& output_dir,
                        const DenoiseOptions& opt, std::ostream& log = std::cout) {
  const auto files = list_images(input_dir);
  if (files.empty()) throw EmptyInputDir("denoise: no .pgm/.png images in " + input_dir);

  DenoiserModel model;
  const DenoiserModel* model_ptr = nullptr;
  if (opt.method == "sddpm") {
    model = load_checkpoint(opt.checkpoint_path);
    if (opt.expect_timesteps != 0 && opt.expect_timesteps != model.net.timesteps)
      throw CheckpointMismatch("denoise: expected T=" + std::to_string(opt.expect_timesteps) +
                               " but checkpoint was trained with T=" +
                               std::to_string(model.net.timesteps));
    if (opt.expect_alpha_min != 0.0 &&
        std::abs(opt.expect_alpha_min - model.schedule.alphas.front()) > 1e-12)
      throw CheckpointMismatch("denoise: alpha_min disagrees with checkpoint schedule");
    if (opt.expect_alpha_max != 0.0 &&
        std::abs(opt.expect_alpha_max - model.schedule.alphas.back()) > 1e-12)
      throw CheckpointMismatch("denoise: alpha_max disagrees with checkpoint schedule");
    model_ptr = &model;
  }

  fs::create_directories(output_dir);
  using clock = std::chrono::steady_clock;
  double total_s = 0.0;
  for (const auto& path : files) {
    const Image noisy = load_image(path.string());
    const auto t0 = clock::now();
    const Image out = detail::run_method(opt.method, noisy, model_ptr, opt.srad, opt.nlm, opt.lee);
    const double dt = std::chrono::duration<double>(clock::now() - t0).count();
    total_s += dt;
    save_image(out, (fs::path(output_dir) / (path.stem().string() + ".pgm")).string());
    if (opt.log_timing)
      log << "denoised " << path.filename().string() << " in " << format_f6(dt) << " s\n";
  }
  if (opt.log_timing)
    log << opt.method << ": " << files.size() << " images in " << format_f6(total_s)
        << " s total, " << format_f6(total_s / static_cast<double>(files.size()))
        << " s per image\n";
  return static_cast<long>(files.size());
}

/// Full evaluation grid: corrupt the clean set with the multiplicative kernel
/// at each alpha, denoise with each method, and aggregate PSNR/SSIM means.
/// Rows are sorted by (method, alpha); "external" rows merge an import CSV.
/// Writes report.csv into output_dir.
inline EvalReport cmd_evaluate(const EvalRunConfig& cfg) {
  const auto files = list_images(cfg.dataset_dir);
  if (files.empty()) throw EmptyDataset("evaluate: no .pgm/.png images in " + cfg.dataset_dir);

  std::vector<std::string> methods = cfg.methods;
  std::sort(methods.begin(), methods.end());
  methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
  std::vector<double> alphas = cfg.alpha_levels;
  std::sort(alphas.begin(), alphas.end());

  const bool want_external =
      std::find(methods.begin(), methods.end(), "external") != methods.end();
  if (want_external && cfg.external_csv.empty())
    throw MissingExternalCsv("evaluate: methods include \"external\" but no external_csv given");

  DenoiserModel model;
  const DenoiserModel* model_ptr = nullptr;
  if (std::find(methods.begin(), methods.end(), "sddpm") != methods.end()) {
    if (cfg.checkpoint.empty())
      throw ConfigError("evaluate: methods include \"sddpm\" but no checkpoint given");
    model = load_checkpoint(cfg.checkpoint);
    model_ptr = &model;
  }

  std::vector<Image> clean;
  std::vector<std::string> names;
  for (const auto& f : files) {
    clean.push_back(load_image(f.string()));
    names.push_back(f.filename().string());
  }

  using clock = std::chrono::steady_clock;
  EvalReport report;
  for (const std::string& method : methods) {
    if (method == "external") continue;
    for (double alpha : alphas) {
      struct PerImage {
        double psnr_v = 0.0, ssim_v = 0.0, seconds = 0.0;
      };
      std::vector<PerImage> per(clean.size());
      parallel_for(clean.size(), cfg.workers, [&](std::size_t i) {
        const Image noisy = corrupt_multiplicative(
            clean[i], alpha, eval_corruption_seed(cfg.seed, names[i]));
        const auto t0 = clock::now();
        const Image restored =
            detail::run_method(method, noisy, model_ptr, cfg.srad, cfg.nlm, cfg.lee);
        per[i].seconds = std::chrono::duration<double>(clock::now() - t0).count();
        per[i].psnr_v = psnr(clean[i], restored, 1.0);
        per[i].ssim_v = ssim(clean[i], restored);
      });
      EvalRow row;
      row.method = method;
      row.alpha = alpha;
      row.n_images = static_cast<long>(clean.size());
      for (const PerImage& p : per) {  // fixed (filename) aggregation order
        row.mean_psnr += p.psnr_v;
        row.mean_ssim += p.ssim_v;
        row.wall_time_s += p.seconds;
      }
      row.mean_psnr /= static_cast<double>(clean.size());
      row.mean_ssim /= static_cast<double>(clean.size());
      if (!cfg.timing) row.wall_time_s = 0.0;
      report.rows.push_back(row);
    }
  }

  if (want_external) {
    const EvalReport imported = report_from_csv(cfg.external_csv);
    for (const EvalRow& r : imported.rows) report.rows.push_back(r);
  }

  std::sort(report.rows.begin(), report.rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return a.method != b.method ? a.method < b.method : a.alpha < b.alpha;
  });
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    if (report.rows[i].method == report.rows[i - 1].method &&
        report.rows[i].alpha == report.rows[i - 1].alpha)
      throw ConfigError("evaluate: duplicate report row for method \"" + report.rows[i].method +
                        "\" at alpha " + format_g10(report.rows[i].alpha));

  fs::create_directories(cfg.output_dir);
  write_text_file((fs::path(cfg.output_dir) / "report.csv").string(), report_to_csv(report));
  return report;
}

}  // namespace despeckle
