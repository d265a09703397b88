// End-to-end CLI tests: exit codes, artifact presence, determinism. Each
// test shells out to the built binary.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

const char* kCli = WS_CLI_PATH;

struct RunOutput {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

RunOutput run_cli(const std::string& args, const fs::path& workdir) {
  const fs::path out_file = workdir / "stdout.txt";
  const fs::path err_file = workdir / "stderr.txt";
  const std::string cmd = std::string(kCli) + " " + args + " > " + out_file.string() + " 2> " +
                          err_file.string();
  const int rc = std::system(cmd.c_str());
  RunOutput out;
  out.exit_code = WEXITSTATUS(rc);
  std::ifstream os(out_file);
  out.stdout_text.assign((std::istreambuf_iterator<char>(os)), std::istreambuf_iterator<char>());
  std::ifstream es(err_file);
  out.stderr_text.assign((std::istreambuf_iterator<char>(es)), std::istreambuf_iterator<char>());
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

const char* kTinyConfig = R"({
  "seed": 4242,
  "epochs": 2,
  "gen": {"n_bags": 16, "instances_per_bag": 6, "n_strong": 40},
  "scheme": {"weak_batch": 24, "strong_batch": 12},
  "eval": {"folds": 5, "workers": 2}
})";

}  // namespace

TEST(Cli, SynthRoundTripAndByteDeterminism) {
  const fs::path dir = fresh_dir("ws_cli_synth");
  write_file(dir / "cfg.json", kTinyConfig);
  const std::string base = "synth --config " + (dir / "cfg.json").string();

  const RunOutput a =
      run_cli(base + " --out " + (dir / "a.json").string() + " --csv " + (dir / "a.csv").string(),
              dir);
  EXPECT_EQ(a.exit_code, 0) << a.stderr_text;
  EXPECT_TRUE(fs::exists(dir / "a.json"));
  EXPECT_TRUE(fs::exists(dir / "a.csv"));

  const RunOutput b = run_cli(base + " --out " + (dir / "b.json").string(), dir);
  EXPECT_EQ(b.exit_code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  fs::remove_all(dir);
}

TEST(Cli, MalformedConfigExitCode2NamesField) {
  const fs::path dir = fresh_dir("ws_cli_badcfg");
  write_file(dir / "bad.json", R"({"seed": 1, "gen": {"n_bgs": 10}})");
  const RunOutput r = run_cli("synth --config " + (dir / "bad.json").string() + " --out " +
                                  (dir / "x.json").string(),
                              dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.stderr_text.find("config.gen.n_bgs"), std::string::npos) << r.stderr_text;

  write_file(dir / "noseed.json", R"({"epochs": 2})");
  const RunOutput r2 = run_cli("synth --config " + (dir / "noseed.json").string() + " --out " +
                                   (dir / "y.json").string(),
                               dir);
  EXPECT_EQ(r2.exit_code, 2);
  EXPECT_NE(r2.stderr_text.find("config.seed"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, TrainZeroEpochsEmitsInitialCheckpoint) {
  const fs::path dir = fresh_dir("ws_cli_train0");
  std::string cfg = kTinyConfig;
  cfg.replace(cfg.find("\"epochs\": 2"), 11, "\"epochs\": 0");
  write_file(dir / "cfg.json", cfg);
  const RunOutput r = run_cli("train --config " + (dir / "cfg.json").string() + " --output-dir " +
                                  (dir / "out").string(),
                              dir);
  EXPECT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_TRUE(fs::exists(dir / "out" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir / "out" / "history.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.json"));
  fs::remove_all(dir);
}

TEST(Cli, TrainDeterministicArtifacts) {
  const fs::path dir = fresh_dir("ws_cli_train_det");
  write_file(dir / "cfg.json", kTinyConfig);
  const RunOutput a = run_cli("train --config " + (dir / "cfg.json").string() + " --output-dir " +
                                  (dir / "out1").string(),
                              dir);
  const RunOutput b = run_cli("train --config " + (dir / "cfg.json").string() + " --output-dir " +
                                  (dir / "out2").string(),
                              dir);
  EXPECT_EQ(a.exit_code, 0) << a.stderr_text;
  EXPECT_EQ(b.exit_code, 0);
  EXPECT_EQ(slurp(dir / "out1" / "checkpoint.bin"), slurp(dir / "out2" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir / "out1" / "history.csv"), slurp(dir / "out2" / "history.csv"));
  EXPECT_EQ(slurp(dir / "out1" / "metrics.json"), slurp(dir / "out2" / "metrics.json"));
  fs::remove_all(dir);
}

TEST(Cli, TrainFromDatasetFile) {
  const fs::path dir = fresh_dir("ws_cli_train_data");
  write_file(dir / "cfg.json", kTinyConfig);
  const RunOutput s = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " +
                                  (dir / "data.json").string(),
                              dir);
  ASSERT_EQ(s.exit_code, 0) << s.stderr_text;
  const RunOutput t = run_cli("train --config " + (dir / "cfg.json").string() + " --data " +
                                  (dir / "data.json").string() + " --output-dir " +
                                  (dir / "out").string(),
                              dir);
  EXPECT_EQ(t.exit_code, 0) << t.stderr_text;
  EXPECT_TRUE(fs::exists(dir / "out" / "checkpoint.bin"));
  fs::remove_all(dir);
}

TEST(Cli, NumericFailureExitCode3) {
  const fs::path dir = fresh_dir("ws_cli_nan");
  write_file(dir / "cfg.json", R"({
    "seed": 7,
    "epochs": 4,
    "gen": {"n_bags": 16, "instances_per_bag": 6, "n_strong": 40},
    "scheme": {"weak_batch": 24, "strong_batch": 12, "optimizer": "sgd", "learning_rate": 1e14}
  })");
  const RunOutput r = run_cli("train --config " + (dir / "cfg.json").string() + " --output-dir " +
                                  (dir / "out").string(),
                              dir);
  EXPECT_EQ(r.exit_code, 3);
  fs::remove_all(dir);
}

TEST(Cli, SeparableToyReachesValAccuracy) {
  const fs::path dir = fresh_dir("ws_cli_toy");
  const RunOutput r = run_cli(std::string("train --config ") + WS_SOURCE_DIR +
                                  "/configs/toy_separable.json --output-dir " +
                                  (dir / "out").string(),
                              dir);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  const std::string metrics = slurp(dir / "out" / "metrics.json");
  const auto pos = metrics.find("\"val_accuracy\": ");
  ASSERT_NE(pos, std::string::npos);
  const double acc = std::stod(metrics.substr(pos + 16));
  EXPECT_GE(acc, 0.95);
  fs::remove_all(dir);
}

TEST(Cli, VerifyPassesCleanWithinTimeBudget) {
  const fs::path dir = fresh_dir("ws_cli_verify");
  const auto start = std::chrono::steady_clock::now();
  const RunOutput r = run_cli("verify", dir);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(r.exit_code, 0) << r.stdout_text;
  EXPECT_NE(r.stdout_text.find("PASS  gradcheck"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("PASS  algorithm-trace"), std::string::npos);
  EXPECT_EQ(r.stdout_text.find("FAIL"), std::string::npos);
  EXPECT_LT(secs, 60.0);
  fs::remove_all(dir);
}

TEST(Cli, VerifyInjectedGradientBugFailsNamingLayer) {
  const fs::path dir = fresh_dir("ws_cli_verify_bug");
  const RunOutput r = run_cli("verify --inject-grad-bug 2", dir);
  EXPECT_EQ(r.exit_code, 4);
  EXPECT_NE(r.stdout_text.find("FAIL  gradcheck"), std::string::npos);
  EXPECT_NE(r.stdout_text.find("layer1.weight"), std::string::npos) << r.stdout_text;
  fs::remove_all(dir);
}

TEST(Cli, GradcheckSubcommand) {
  const fs::path dir = fresh_dir("ws_cli_gradcheck");
  const RunOutput r = run_cli("gradcheck --seed 11", dir);
  EXPECT_EQ(r.exit_code, 0) << r.stdout_text;
  EXPECT_NE(r.stdout_text.find("gradcheck passed"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, DumpImagesWritesPpmTriples) {
  const fs::path dir = fresh_dir("ws_cli_ppm");
  write_file(dir / "cfg.json", R"({
    "seed": 9,
    "gen": {"n_bags": 4, "instances_per_bag": 4, "n_strong": 6, "substrate": "images",
            "shift": "none"}
  })");
  const RunOutput r = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " +
                                  (dir / "d.json").string() + " --dump-images 2 --output-dir " +
                                  dir.string(),
                              dir);
  ASSERT_EQ(r.exit_code, 0) << r.stderr_text;
  EXPECT_TRUE(fs::exists(dir / "patches" / "patch_000.ppm"));
  EXPECT_TRUE(fs::exists(dir / "patches" / "patch_000_jitter.ppm"));
  EXPECT_TRUE(fs::exists(dir / "patches" / "patch_000_stain.ppm"));
  const std::string ppm = slurp(dir / "patches" / "patch_000.ppm");
  EXPECT_EQ(ppm.rfind("P6\n16 16\n255\n", 0), 0u);
  fs::remove_all(dir);
}

TEST(Cli, UnknownSubcommandIsConfigError) {
  const fs::path dir = fresh_dir("ws_cli_unknown");
  const RunOutput r = run_cli("frobnicate", dir);
  EXPECT_EQ(r.exit_code, 2);
  fs::remove_all(dir);
}

TEST(Cli, EnvVarOverridesOutputDir) {
  const fs::path dir = fresh_dir("ws_cli_env");
  std::string cfg = kTinyConfig;
  cfg.replace(cfg.find("\"epochs\": 2"), 11, "\"epochs\": 0");
  write_file(dir / "cfg.json", cfg);
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = "WEAKSTRONG_OUTPUT_DIR=" + (dir / "envout").string() + " " + kCli +
                          " train --config " + (dir / "cfg.json").string() + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int rc = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 0);
  EXPECT_TRUE(fs::exists(dir / "envout" / "checkpoint.bin"));
  fs::remove_all(dir);
}
