// Batch experiment front-end: dataset generation, single training runs,
// benchmark sweeps, and the self-verification suite.
//
// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 verification
// failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "weakstrong/bench.hpp"
#include "weakstrong/config.hpp"
#include "weakstrong/cv.hpp"
#include "weakstrong/dataset_io.hpp"
#include "weakstrong/metrics.hpp"
#include "weakstrong/verify.hpp"
#include "weakstrong/version.hpp"

namespace fs = std::filesystem;
using namespace weakstrong;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerification = 4;

std::string resolve_output_dir(const ExperimentConfig& cfg, const std::string& cli_override) {
  if (!cli_override.empty()) return cli_override;
  if (const char* env = std::getenv("WEAKSTRONG_OUTPUT_DIR"); env != nullptr && env[0] != '\0') {
    return env;
  }
  return cfg.output_dir;
}

Dataset obtain_dataset(const ExperimentConfig& cfg, const std::string& data_override,
                       std::string& note) {
  const std::string path = !data_override.empty() ? data_override : cfg.dataset_path;
  if (!path.empty()) {
    Dataset ds = load_dataset(path);
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    note = "file:" + hex64(fnv1a64(bytes));
    return ds;
  }
  note = "generated:seed=" + std::to_string(cfg.gen.seed);
  return generate_dataset(cfg.gen);
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& command,
                    const std::string& dataset_note) {
  const json manifest{{"kind", "weakstrong-run-manifest"},
                      {"tool_version", kVersion},
                      {"command", command},
                      {"config_hash", config_hash(cfg)},
                      {"config", experiment_config_json(cfg)},
                      {"dataset", dataset_note}};
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw Error("cannot write manifest in " + dir.string());
  os << manifest.dump(1) << '\n';
}

int cmd_synth(const std::string& config_path, const std::string& out_path,
              const std::string& csv_path, std::size_t dump_images,
              const std::string& out_dir_flag) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const Dataset dataset = generate_dataset(cfg.gen);
  save_dataset(out_path, dataset);
  std::cout << "wrote " << out_path << " (" << dataset.bags.size() << " bags, "
            << dataset.strong.size() << " strong instances)\n";
  if (!csv_path.empty()) {
    export_dataset_csv(csv_path, dataset);
    std::cout << "wrote " << csv_path << '\n';
  }
  if (dump_images > 0) {
    if (cfg.gen.substrate != Substrate::images) {
      throw ConfigError("--dump-images: config.gen.substrate must be 'images'");
    }
    const fs::path dir = fs::path(resolve_output_dir(cfg, out_dir_flag)) / "patches";
    fs::create_directories(dir);
    Rng rng(cfg.gen.seed ^ 0xd09);
    std::size_t written = 0;
    for (const Instance& inst : dataset.strong) {
      if (written >= dump_images) break;
      char name[64];
      std::snprintf(name, sizeof(name), "patch_%03zu", written);
      write_ppm((dir / (std::string(name) + ".ppm")).string(), inst.image);
      Image jittered = color_jitter(inst.image, rng, cfg.shift.jitter_strength);
      write_ppm((dir / (std::string(name) + "_jitter.ppm")).string(), jittered);
      if (!dataset.bags.empty() && !dataset.bags.front().instances.empty()) {
        const Image& target = dataset.bags.front().instances.front().image;
        write_ppm((dir / (std::string(name) + "_stain.ppm")).string(),
                  stain_transfer(inst.image, target).image);
      }
      ++written;
    }
    std::cout << "wrote " << written << " patch triples under " << dir.string() << '\n';
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_dir_flag) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const fs::path out_dir(resolve_output_dir(cfg, out_dir_flag));
  fs::create_directories(out_dir);

  std::string dataset_note;
  const Dataset dataset = obtain_dataset(cfg, data_override, dataset_note);
  const auto [train_idx, holdout_idx] =
      train_holdout_split(dataset.bags, cfg.eval.holdout_fraction, cfg.seed);
  const TrainData data =
      build_train_data(dataset.bags, train_idx, holdout_idx, dataset.strong, dataset.config);
  const TrainResult result =
      train_run(data, cfg.model, cfg.scheme, cfg.shift, cfg.stop, cfg.seed);

  save_checkpoint((out_dir / "checkpoint.bin").string(), result.model, result.params);
  write_history_csv((out_dir / "history.csv").string(), result.history);

  // instance-level validation metrics of the restored best checkpoint
  const ForwardTrace trace = forward(result.params, data.val_x);
  const std::vector<int> preds = argmax_rows(trace.probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == data.val_y[i]) ++correct;
  }
  const double val_acc =
      preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());

  const json metrics{{"best_epoch", result.best_epoch},
                     {"epochs_run", result.epochs_run},
                     {"best_val_loss", result.best_val_loss},
                     {"val_accuracy", val_acc},
                     {"config_hash", config_hash(cfg)},
                     {"seed", cfg.seed}};
  std::ofstream ms(out_dir / "metrics.json", std::ios::binary);
  ms << metrics.dump(1) << '\n';
  write_manifest(out_dir, cfg, "train", dataset_note);

  std::cout << "trained " << result.epochs_run << " epochs, best epoch " << result.best_epoch
            << ", val loss " << format_double(result.best_val_loss) << ", val accuracy "
            << format_double(val_acc) << '\n'
            << "outputs in " << out_dir.string() << '\n';
  return 0;
}

int cmd_benchmark(const std::string& config_path, const std::string& table_name,
                  const std::string& out_dir_flag) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  BenchTable table;
  if (table_name == "shift") {
    table = BenchTable::shift;
  } else if (table_name == "integration") {
    table = BenchTable::integration;
  } else {
    throw ConfigError("--table: expected 'shift' or 'integration'");
  }
  const fs::path out_dir = fs::path(resolve_output_dir(cfg, out_dir_flag)) / table_name;
  const BenchResult result = run_benchmark(cfg, table, out_dir.string());
  if (result.reused_parts > 0) {
    std::cout << "resumed: reused " << result.reused_parts << " completed folds\n";
  }
  std::cout << format_report_table(result.rows) << "outputs in " << out_dir.string() << '\n';
  return 0;
}

int cmd_verify(int inject_grad_bug) {
  const std::vector<CheckResult> results = run_verification(inject_grad_bug);
  bool all_pass = true;
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "verification passed" : "verification FAILED") << '\n';
  return all_pass ? 0 : kExitVerification;
}

int cmd_gradcheck(std::uint64_t seed) {
  double worst = 0.0;
  std::string worst_at;
  for (std::size_t layers : {1u, 2u, 3u}) {
    for (std::size_t classes : {2u, 5u}) {
      ModelConfig cfg;
      cfg.input_dim = 6;
      cfg.hidden_dims.assign(layers, 10);
      cfg.num_classes = classes;
      const GradCheckReport rep = grad_check_detail(cfg, seed + layers * 10 + classes);
      std::cout << "hidden=" << layers << " K=" << classes
                << " max rel err = " << format_double(rep.max_rel_error) << " at "
                << rep.worst_tensor << '\n';
      if (rep.max_rel_error >= worst) {
        worst = rep.max_rel_error;
        worst_at = rep.worst_tensor;
      }
    }
  }
  const bool pass = worst < 1e-5;
  std::cout << (pass ? "gradcheck passed" : "gradcheck FAILED") << " (worst " <<
      format_double(worst) << " at " << worst_at << ")\n";
  return pass ? 0 : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakstrong: weak+strong supervision experiments on synthetic bag/instance data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_path, csv_path, data_path, table_name, out_dir_flag;
  std::size_t dump_images = 0;
  int inject_grad_bug = -1;
  std::uint64_t gradcheck_seed = 7;

  CLI::App* synth = app.add_subcommand("synth", "generate and persist a synthetic dataset");
  synth->add_option("--config", config_path, "experiment config (JSON)")->required();
  synth->add_option("--out", out_path, "output dataset file")->required();
  synth->add_option("--csv", csv_path, "also export a flat CSV of instances");
  synth->add_option("--dump-images", dump_images,
                    "write N raw/jittered/stain-transferred patch PPMs (image substrate)");
  synth->add_option("--output-dir", out_dir_flag, "override the config output_dir");

  CLI::App* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--data", data_path, "dataset file (overrides config.dataset)");
  train->add_option("--output-dir", out_dir_flag, "override the config output_dir");

  CLI::App* bench = app.add_subcommand("benchmark", "run a 6-row benchmark sweep over 5-fold CV");
  bench->add_option("--config", config_path, "experiment config (JSON)")->required();
  bench->add_option("--table", table_name, "'shift' or 'integration'")->required();
  bench->add_option("--output-dir", out_dir_flag, "override the config output_dir");

  CLI::App* verify = app.add_subcommand("verify", "run the invariant/oracle self-check suite");
  verify->add_option("--inject-grad-bug", inject_grad_bug,
                     "test hook: perturb the analytic gradient of tensor N")
      ->group("");  // hidden

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check matrix");
  gradcheck->add_option("--seed", gradcheck_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_path, csv_path, dump_images, out_dir_flag);
    if (train->parsed()) return cmd_train(config_path, data_path, out_dir_flag);
    if (bench->parsed()) return cmd_benchmark(config_path, table_name, out_dir_flag);
    if (verify->parsed()) return cmd_verify(inject_grad_bug);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const VerificationError& e) {
    std::cerr << "verification failure: " << e.what() << '\n';
    return kExitVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
