// Command-line experiment harness: corrupt, train, denoise, evaluate and
// schedule subcommands over the despeckle library. Flags mirror the JSON
// config keys; a flag given on the command line overrides the file value.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "despeckle/despeckle.hpp"

namespace {

nlohmann::json load_config_or_empty(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  return despeckle::detail::load_json_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"despeckle: multiplicative-noise image denoising toolkit"};
  app.require_subcommand(1);

  // --- schedule ------------------------------------------------------------
  auto* sched = app.add_subcommand("schedule", "write the linear noise schedule as CSV");
  double s_alpha_min = 0.005, s_alpha_max = 0.5;
  int s_timesteps = 200;
  std::string s_out = "schedule.csv";
  sched->add_option("--alpha-min", s_alpha_min, "smallest noise level");
  sched->add_option("--alpha-max", s_alpha_max, "largest noise level");
  sched->add_option("--timesteps,-T", s_timesteps, "number of schedule steps");
  sched->add_option("--out,-o", s_out, "output CSV path");

  // --- corrupt -------------------------------------------------------------
  auto* corrupt = app.add_subcommand("corrupt", "apply speckle to every image in a directory");
  std::string c_in, c_out, c_kernel = "multiplicative";
  double c_alpha = 0.2;
  std::uint64_t c_seed = despeckle::default_seed();
  corrupt->add_option("--input-dir,-i", c_in, "directory of clean .pgm/.png images")->required();
  corrupt->add_option("--output-dir,-o", c_out, "directory for corrupted PGMs")->required();
  corrupt->add_option("--alpha", c_alpha, "noise standard deviation");
  corrupt->add_option("--kernel", c_kernel, "multiplicative | log");
  corrupt->add_option("--seed", c_seed, "corruption seed");

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a denoiser from a JSON config");
  std::string t_config;
  train_cmd->add_option("--config,-c", t_config, "JSON config path");
  std::string t_dataset, t_output;
  int t_epochs = 0, t_timesteps = 0, t_patch = 0, t_batch = 0, t_workers = -1;
  double t_amin = 0, t_amax = 0, t_lr = 0;
  std::uint64_t t_seed = 0;
  auto* o_dataset = train_cmd->add_option("--dataset-dir", t_dataset, "training image directory");
  auto* o_output = train_cmd->add_option("--output-dir", t_output, "checkpoint/trace directory");
  auto* o_epochs = train_cmd->add_option("--epochs", t_epochs, "training epochs");
  auto* o_timesteps = train_cmd->add_option("--timesteps,-T", t_timesteps, "schedule steps");
  auto* o_amin = train_cmd->add_option("--alpha-min", t_amin, "smallest noise level");
  auto* o_amax = train_cmd->add_option("--alpha-max", t_amax, "largest noise level");
  auto* o_patch = train_cmd->add_option("--patch-size", t_patch, "training crop size");
  auto* o_batch = train_cmd->add_option("--batch-size", t_batch, "SGD batch size");
  auto* o_lr = train_cmd->add_option("--initial-lr", t_lr, "initial learning rate");
  auto* o_tseed = train_cmd->add_option("--seed", t_seed, "training seed");
  auto* o_tworkers = train_cmd->add_option("--workers", t_workers, "worker threads (0 = auto)");

  // --- denoise -------------------------------------------------------------
  auto* den = app.add_subcommand("denoise", "denoise every image in a directory");
  std::string d_in, d_out, d_method = "sddpm", d_ckpt;
  despeckle::DenoiseOptions d_opt;
  int d_expect_T = 0;
  double d_expect_amin = 0, d_expect_amax = 0;
  bool d_quiet = false;
  den->add_option("--input-dir,-i", d_in, "directory of noisy images")->required();
  den->add_option("--output-dir,-o", d_out, "directory for denoised PGMs")->required();
  den->add_option("--method,-m", d_method, "sddpm | srad | nlmeans | lee");
  den->add_option("--checkpoint", d_ckpt, "model checkpoint (sddpm)");
  den->add_option("--timesteps,-T", d_expect_T, "expected schedule steps (checkpoint check)");
  den->add_option("--alpha-min", d_expect_amin, "expected alpha_min (checkpoint check)");
  den->add_option("--alpha-max", d_expect_amax, "expected alpha_max (checkpoint check)");
  den->add_option("--srad-iterations", d_opt.srad.iterations, "SRAD iterations");
  den->add_option("--srad-dt", d_opt.srad.dt, "SRAD time step");
  den->add_option("--srad-rho", d_opt.srad.rho, "SRAD scale decay rate");
  den->add_option("--srad-q0", d_opt.srad.q0, "SRAD initial speckle scale");
  den->add_option("--nlm-patch-radius", d_opt.nlm.patch_radius, "NL-means patch radius");
  den->add_option("--nlm-search-radius", d_opt.nlm.search_radius, "NL-means search radius");
  den->add_option("--nlm-h", d_opt.nlm.h, "NL-means filtering strength");
  den->add_option("--nlm-sigma2", d_opt.nlm.sigma2, "NL-means noise compensation");
  den->add_option("--lee-window-radius", d_opt.lee.window_radius, "Lee window radius");
  den->add_option("--lee-noise-variance", d_opt.lee.noise_variance_estimate,
                  "Lee relative noise variance estimate");
  den->add_flag("--quiet", d_quiet, "suppress per-image timing log");

  // --- evaluate ------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "run the method x alpha evaluation grid");
  std::string e_config, e_dataset, e_output, e_ckpt, e_external;
  std::vector<std::string> e_methods;
  std::vector<double> e_alphas;
  std::uint64_t e_seed = 0;
  int e_workers = -1;
  bool e_no_timing = false;
  ev->add_option("--config,-c", e_config, "JSON config path");
  auto* eo_dataset = ev->add_option("--dataset-dir", e_dataset, "clean test image directory");
  auto* eo_output = ev->add_option("--output-dir", e_output, "report directory");
  auto* eo_methods = ev->add_option("--methods", e_methods, "methods to evaluate");
  auto* eo_alphas = ev->add_option("--alpha-levels", e_alphas, "noise levels to test");
  auto* eo_seed = ev->add_option("--seed", e_seed, "evaluation seed");
  auto* eo_ckpt = ev->add_option("--checkpoint", e_ckpt, "sddpm checkpoint");
  auto* eo_external = ev->add_option("--external-csv", e_external, "imported scores CSV");
  auto* eo_workers = ev->add_option("--workers", e_workers, "worker threads (0 = auto)");
  ev->add_flag("--no-timing", e_no_timing, "pin wall_time_s to 0 for byte-stable reruns");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sched->parsed()) {
      despeckle::cmd_schedule(s_alpha_min, s_alpha_max, s_timesteps, s_out);
      std::cout << "wrote " << s_timesteps << " schedule rows to " << s_out << "\n";
    } else if (corrupt->parsed()) {
      const long n = despeckle::cmd_corrupt(c_in, c_out, c_alpha, c_kernel, c_seed);
      std::cout << "corrupted " << n << " images into " << c_out << "\n";
    } else if (train_cmd->parsed()) {
      nlohmann::json j = load_config_or_empty(t_config);
      if (o_dataset->count()) j["dataset_dir"] = t_dataset;
      if (o_output->count()) j["output_dir"] = t_output;
      if (o_epochs->count()) j["epochs"] = t_epochs;
      if (o_timesteps->count()) j["timesteps"] = t_timesteps;
      if (o_amin->count()) j["alpha_min"] = t_amin;
      if (o_amax->count()) j["alpha_max"] = t_amax;
      if (o_patch->count()) j["patch_size"] = t_patch;
      if (o_batch->count()) j["batch_size"] = t_batch;
      if (o_lr->count()) j["initial_lr"] = t_lr;
      if (o_tseed->count()) j["seed"] = t_seed;
      if (o_tworkers->count()) j["workers"] = t_workers;
      const std::string origin = t_config.empty() ? "train flags" : t_config;
      despeckle::cmd_train(despeckle::parse_train_config(j, origin));
    } else if (den->parsed()) {
      d_opt.method = d_method;
      d_opt.checkpoint_path = d_ckpt;
      d_opt.expect_timesteps = d_expect_T;
      d_opt.expect_alpha_min = d_expect_amin;
      d_opt.expect_alpha_max = d_expect_amax;
      d_opt.log_timing = !d_quiet;
      despeckle::cmd_denoise(d_in, d_out, d_opt);
    } else if (ev->parsed()) {
      nlohmann::json j = load_config_or_empty(e_config);
      if (eo_dataset->count()) j["dataset_dir"] = e_dataset;
      if (eo_output->count()) j["output_dir"] = e_output;
      if (eo_methods->count()) j["methods"] = e_methods;
      if (eo_alphas->count()) j["alpha_levels"] = e_alphas;
      if (eo_seed->count()) j["seed"] = e_seed;
      if (eo_ckpt->count()) j["checkpoint"] = e_ckpt;
      if (eo_external->count()) j["external_csv"] = e_external;
      if (eo_workers->count()) j["workers"] = e_workers;
      if (e_no_timing) j["timing"] = false;
      const std::string origin = e_config.empty() ? "evaluate flags" : e_config;
      const despeckle::EvalReport report =
          despeckle::cmd_evaluate(despeckle::parse_eval_config(j, origin));
      std::cout << despeckle::report_to_csv(report);
    }
  } catch (const despeckle::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
