#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "despeckle/despeckle.hpp"
#include "testutil.hpp"

using namespace despeckle;
using testutil::TempDir;

namespace {

void write_clean_set(const std::string& dir, int count, int size) {
  for (int i = 0; i < count; ++i) {
    const Image img = synth_image(i % 2 == 0 ? SynthKind::kBlobs : SynthKind::kPiecewise, size,
                                  static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "img_%02d.pgm", i);
    save_image(img, (std::filesystem::path(dir) / name).string());
  }
}

nlohmann::json minimal_eval_json(const TempDir& data, const TempDir& out) {
  nlohmann::json j;
  j["dataset_dir"] = data.str();
  j["output_dir"] = out.str();
  j["methods"] = {"lee"};
  j["alpha_levels"] = {0.2};
  j["seed"] = 5;
  j["timing"] = false;
  return j;
}

}  // namespace

TEST_CASE("train config: required keys are named, unknown keys rejected") {
  nlohmann::json j;
  j["dataset_dir"] = "/tmp/x";
  j["output_dir"] = "/tmp/y";
  try {
    parse_train_config(j, "test");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epochs") != std::string::npos);
  }

  j["epochs"] = 3;
  CHECK_NOTHROW(parse_train_config(j, "test"));

  j["epochz"] = 3;  // typo must be fatal
  try {
    parse_train_config(j, "test");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("epochz") != std::string::npos);
  }
}

TEST_CASE("eval config validation") {
  TempDir data("evcfg_data"), out("evcfg_out");
  nlohmann::json j = minimal_eval_json(data, out);

  j["methods"] = {"lee", "warp"};
  CHECK_THROWS_AS(parse_eval_config(j, "test"), ConfigError);
  j["methods"] = {"lee"};

  j["alpha_levels"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_eval_config(j, "test"), ConfigError);
  j["alpha_levels"] = {1.5};
  CHECK_THROWS_AS(parse_eval_config(j, "test"), ConfigError);
  j["alpha_levels"] = {0.2};
  CHECK_NOTHROW(parse_eval_config(j, "test"));
}

TEST_CASE("config round trip: serialize(parse(x)) is a fixed point") {
  TempDir data("rt_data"), out("rt_out");
  nlohmann::json j = minimal_eval_json(data, out);
  const EvalRunConfig a = parse_eval_config(j, "test");
  const nlohmann::json ja = to_json(a);
  const EvalRunConfig b = parse_eval_config(ja, "test");
  CHECK(to_json(b) == ja);
  CHECK(to_json(b).dump() == ja.dump());

  nlohmann::json tj;
  tj["dataset_dir"] = "/d";
  tj["output_dir"] = "/o";
  tj["epochs"] = 7;
  tj["initial_lr"] = 0.125;
  const TrainRunConfig t1 = parse_train_config(tj, "test");
  const nlohmann::json jt = to_json(t1);
  CHECK(to_json(parse_train_config(jt, "test")) == jt);
  CHECK(jt["epochs"] == 7);
  CHECK(jt["initial_lr"] == 0.125);
}

TEST_CASE("DESPECKLE_SEED is the seed fallback") {
  ::setenv("DESPECKLE_SEED", "4711", 1);
  CHECK(default_seed() == 4711);
  TempDir data("seed_data"), out("seed_out");
  nlohmann::json j = minimal_eval_json(data, out);
  j.erase("seed");
  CHECK(parse_eval_config(j, "test").seed == 4711);
  ::unsetenv("DESPECKLE_SEED");
  CHECK(default_seed() == 0);
}

TEST_CASE("cmd_schedule writes the pinned CSV") {
  TempDir tmp("sched");
  const std::string path = tmp.file("schedule.csv");
  cmd_schedule(0.005, 0.5, 200, path);
  const auto rows = read_csv(path);
  REQUIRE(rows.size() == 201);
  CHECK(rows[0] == std::vector<std::string>{"t", "alpha_t", "delta"});
  CHECK(rows[30][0] == "30");
  CHECK(parse_csv_double(rows[30][1]) == doctest::Approx(0.0771356).epsilon(1e-6));
  CHECK(parse_csv_double(rows[200][1]) == 0.5);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][2] == rows[1][2]);
}

TEST_CASE("cmd_corrupt: count, manifest, zero-alpha identity, determinism") {
  TempDir in("cor_in"), out1("cor_out1"), out2("cor_out2"), out0("cor_out0");
  write_clean_set(in.str(), 5, 24);

  CHECK(cmd_corrupt(in.str(), out1.str(), 0.2, "multiplicative", 9) == 5);
  const auto manifest = read_csv(out1.file("manifest.csv"));
  REQUIRE(manifest.size() == 6);
  CHECK(manifest[0] == std::vector<std::string>{"filename", "alpha", "kernel", "seed"});

  cmd_corrupt(in.str(), out2.str(), 0.2, "multiplicative", 9);
  for (int i = 0; i < 5; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%02d.pgm", i);
    CHECK(testutil::read_bytes(out1.file(name)) == testutil::read_bytes(out2.file(name)));
  }

  cmd_corrupt(in.str(), out0.str(), 0.0, "log", 1);
  for (int i = 0; i < 5; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%02d.pgm", i);
    CHECK(testutil::read_bytes(out0.file(name)) ==
          testutil::read_bytes((std::filesystem::path(in.str()) / name).string()));
  }

  TempDir empty("cor_empty");
  CHECK_THROWS_AS(cmd_corrupt(empty.str(), out1.str(), 0.1, "log", 0), EmptyInputDir);
  CHECK_THROWS_AS(cmd_corrupt(in.str(), out1.str(), 0.1, "boxcox", 0), ConfigError);
}

TEST_CASE("cmd_train writes checkpoint and trace; reruns are byte-identical") {
  TempDir data("tr_data"), out1("tr_out1"), out2("tr_out2");
  write_clean_set(data.str(), 4, 24);

  nlohmann::json j;
  j["dataset_dir"] = data.str();
  j["output_dir"] = out1.str();
  j["epochs"] = 3;
  j["timesteps"] = 10;
  j["patch_size"] = 16;
  j["batch_size"] = 2;
  j["seed"] = 77;
  j["base_channels"] = 6;
  j["mid_channels"] = 8;
  j["workers"] = 2;

  std::ostringstream sink;
  const std::string ckpt1 = cmd_train(parse_train_config(j, "test"), sink);
  CHECK(std::filesystem::exists(ckpt1));
  const auto trace1 = read_csv(out1.file("loss_trace.csv"));
  REQUIRE(trace1.size() == 4);
  CHECK(trace1[0] == std::vector<std::string>{"epoch", "train_loss", "val_loss", "lr"});

  j["output_dir"] = out2.str();
  cmd_train(parse_train_config(j, "test"), sink);
  CHECK(testutil::read_bytes(out1.file("loss_trace.csv")) ==
        testutil::read_bytes(out2.file("loss_trace.csv")));
  CHECK(testutil::read_bytes(out1.file("checkpoint.bin")) ==
        testutil::read_bytes(out2.file("checkpoint.bin")));

  // loaded checkpoint denoises 2x-larger inputs than the training patch
  const DenoiserModel model = load_checkpoint(ckpt1);
  const Image big = synth_image(SynthKind::kBlobs, 32, 5);
  const Image restored = denoise(model, big);
  CHECK(restored.width == 32);
  CHECK(restored.height == 32);
}

TEST_CASE("cmd_denoise: lee identity limit, checkpoint checks, timing log") {
  TempDir in("dn_in"), out("dn_out"), ckpt_dir("dn_ckpt");
  write_clean_set(in.str(), 3, 24);

  DenoiseOptions opt;
  opt.method = "lee";
  opt.lee.noise_variance_estimate = 0.0;
  std::ostringstream log;
  CHECK(cmd_denoise(in.str(), out.str(), opt, log) == 3);
  CHECK(log.str().find("per image") != std::string::npos);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%02d.pgm", i);
    // identity up to 8-bit quantization: inputs round-trip exactly
    CHECK(testutil::read_bytes(out.file(name)) ==
          testutil::read_bytes((std::filesystem::path(in.str()) / name).string()));
  }

  DenoiserModel m;
  m.schedule = linear_schedule(0.005, 0.5, 12);
  m.net = DenoiserNet::init({}, 12, 1);
  save_checkpoint(m, ckpt_dir.file("m.bin"));

  DenoiseOptions sopt;
  sopt.method = "sddpm";
  sopt.checkpoint_path = ckpt_dir.file("m.bin");
  sopt.expect_timesteps = 200;  // disagrees with the checkpoint's 12
  std::ostringstream log2;
  CHECK_THROWS_AS(cmd_denoise(in.str(), out.str(), sopt, log2), CheckpointMismatch);
  sopt.expect_timesteps = 12;
  sopt.expect_alpha_max = 0.4;
  CHECK_THROWS_AS(cmd_denoise(in.str(), out.str(), sopt, log2), CheckpointMismatch);
  sopt.expect_alpha_max = 0.5;
  CHECK(cmd_denoise(in.str(), out.str(), sopt, log2) == 3);
}

TEST_CASE("the bundled tiny config parses and trains end to end") {
  TempDir out("bundled_out");
  nlohmann::json j = despeckle::detail::load_json_file(
      std::string(DESPECKLE_REPO_DIR) + "/configs/tiny_train.json");
  j["dataset_dir"] = std::string(DESPECKLE_REPO_DIR) + "/data/tiny";
  j["output_dir"] = out.str();
  j["epochs"] = 5;  // plumbing check; the acceptance suite runs the full recipe
  const TrainRunConfig cfg = parse_train_config(j, "configs/tiny_train.json");
  CHECK(cfg.train.timesteps == 50);
  CHECK(cfg.train.batch_size == 8);
  std::ostringstream sink;
  const std::string ckpt = cmd_train(cfg, sink);
  const DenoiserModel model = load_checkpoint(ckpt);
  CHECK(model.net.timesteps == 50);
  CHECK(model.schedule.alphas.front() == 0.005);
  CHECK(model.schedule.alphas.back() == 0.5);
}

TEST_CASE("cmd_denoise logs per-image and total time for a 32-image batch") {
  TempDir in("batch_in"), out("batch_out");
  for (int i = 0; i < 32; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "b_%02d.pgm", i);
    save_image(synth_image(SynthKind::kPiecewise, 16, static_cast<std::uint64_t>(i)),
               (std::filesystem::path(in.str()) / name).string());
  }
  DenoiseOptions opt;
  opt.method = "lee";
  std::ostringstream log;
  CHECK(cmd_denoise(in.str(), out.str(), opt, log) == 32);
  const std::string text = log.str();
  std::size_t lines = 0, pos = 0;
  while ((pos = text.find("denoised ", pos)) != std::string::npos) {
    ++lines;
    ++pos;
  }
  CHECK(lines == 32);
  CHECK(text.find("32 images in ") != std::string::npos);
  CHECK(text.find("s per image") != std::string::npos);
}

TEST_CASE("cmd_evaluate: row shape, determinism, and external merge") {
  TempDir data("ev_data"), out("ev_out");
  write_clean_set(data.str(), 3, 24);
  nlohmann::json j = minimal_eval_json(data, out);
  j["lee_window_radius"] = 2;

  const EvalReport r1 = cmd_evaluate(parse_eval_config(j, "test"));
  REQUIRE(r1.rows.size() == 1);
  CHECK(r1.rows[0].method == "lee");
  CHECK(r1.rows[0].alpha == 0.2);
  CHECK(r1.rows[0].n_images == 3);
  CHECK(r1.rows[0].wall_time_s == 0.0);  // timing disabled
  CHECK(r1.rows[0].mean_psnr > 5.0);

  const auto bytes1 = testutil::read_bytes(out.file("report.csv"));
  cmd_evaluate(parse_eval_config(j, "test"));
  CHECK(testutil::read_bytes(out.file("report.csv")) == bytes1);

  // parallel rerun must not change a byte
  j["workers"] = 2;
  cmd_evaluate(parse_eval_config(j, "test"));
  CHECK(testutil::read_bytes(out.file("report.csv")) == bytes1);

  // merge an imported row
  const std::string ext = out.file("external.csv");
  write_text_file(ext,
                  "method,alpha,mean_psnr,mean_ssim,n_images,wall_time_s\n"
                  "bm3d,0.2,21.300000,0.777000,3,12.5\n");
  j["methods"] = {"lee", "external"};
  j["external_csv"] = ext;
  const EvalReport r2 = cmd_evaluate(parse_eval_config(j, "test"));
  REQUIRE(r2.rows.size() == 2);
  CHECK(r2.rows[0].method == "bm3d");  // sorted by method name
  CHECK(r2.rows[0].mean_psnr == doctest::Approx(21.3));
  CHECK(r2.rows[1].method == "lee");

  j.erase("external_csv");
  CHECK_THROWS_AS(cmd_evaluate(parse_eval_config(j, "test")), MissingExternalCsv);
}

TEST_CASE("evaluation corruption is the multiplicative kernel with derived seeds") {
  TempDir data("evk_data"), out("evk_out");
  write_clean_set(data.str(), 2, 24);
  nlohmann::json j = minimal_eval_json(data, out);
  const EvalRunConfig cfg = parse_eval_config(j, "test");
  const EvalReport r = cmd_evaluate(cfg);

  // recompute the pipeline by hand for the same seeds and compare the mean
  const auto files = list_images(data.str());
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const auto& f : files) {
    const Image clean = load_image(f.string());
    const Image noisy = corrupt_multiplicative(
        clean, 0.2, eval_corruption_seed(cfg.seed, f.filename().string()));
    const Image restored = lee(noisy, cfg.lee);
    psnr_sum += psnr(clean, restored);
    ssim_sum += ssim(clean, restored);
  }
  CHECK(r.rows[0].mean_psnr == doctest::Approx(psnr_sum / 2.0).epsilon(1e-12));
  CHECK(r.rows[0].mean_ssim == doctest::Approx(ssim_sum / 2.0).epsilon(1e-12));
}

TEST_CASE("corrupted evaluation inputs share the noise field across alpha levels") {
  // the per-image seed ignores alpha, so corruption at two levels uses the
  // same eps draw: the standardized fields must match exactly
  const Image clean(16, 16, 0.5);
  const std::uint64_t seed = eval_corruption_seed(3, "img.pgm");
  const Image a = corrupt_multiplicative(clean, 0.1, seed);
  const Image b = corrupt_multiplicative(clean, 0.2, seed);
  for (std::size_t i = 0; i < clean.data.size(); ++i) {
    const double eps_a = (a.data[i] / 0.5 - 1.0) / 0.1;
    const double eps_b = (b.data[i] / 0.5 - 1.0) / 0.2;
    if (a.data[i] < 1.0 && b.data[i] < 1.0 && a.data[i] > kIntensityFloor &&
        b.data[i] > kIntensityFloor)
      CHECK(eps_a == doctest::Approx(eps_b).epsilon(1e-9));
  }
}

TEST_CASE("report CSV serialization handles infinite PSNR") {
  EvalReport r;
  r.rows.push_back({"lee", 0.2, std::numeric_limits<double>::infinity(), 1.0, 3, 0.0});
  const std::string csv = report_to_csv(r);
  CHECK(csv.find(",inf,") != std::string::npos);

  TempDir tmp("inf_csv");
  write_text_file(tmp.file("r.csv"), csv);
  const EvalReport back = report_from_csv(tmp.file("r.csv"));
  REQUIRE(back.rows.size() == 1);
  CHECK(std::isinf(back.rows[0].mean_psnr));
}
