#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "weakstrong/config.hpp"
#include "weakstrong/cv.hpp"
#include "weakstrong/dataset_io.hpp"
#include "weakstrong/util.hpp"
#include "weakstrong/version.hpp"

namespace weakstrong {

enum class BenchTable { shift, integration };

inline const char* bench_table_name(BenchTable t) {
  return t == BenchTable::shift ? "shift" : "integration";
}

struct BenchRow {
  std::string name;
  SchemeConfig scheme;
  ShiftConfig shift;
};

// Row definitions follow the two benchmark tables' ordering: the data
// integration sweep walks W-only/W+S against plain, MIL and self-weighted
// supervision; the covariate-shift sweep walks the incremental augmentation
// and domain-adaptation ladder on S-only training.
inline std::vector<BenchRow> benchmark_rows(const ExperimentConfig& cfg, BenchTable table) {
  std::vector<BenchRow> rows;
  if (table == BenchTable::integration) {
    const auto row = [&](const char* name, bool use_strong, WeakMode mode) {
      BenchRow r{name, cfg.scheme, cfg.shift};
      r.scheme.use_strong = use_strong;
      r.scheme.use_weak = true;
      r.scheme.weak_mode = mode;
      return r;
    };
    rows.push_back(row("w-only", false, WeakMode::plain));
    rows.push_back(row("w-only-mil", false, WeakMode::mil_ws));
    rows.push_back(row("w-only-swws", false, WeakMode::sw_ws));
    rows.push_back(row("w+s", true, WeakMode::plain));
    rows.push_back(row("w+s-mil", true, WeakMode::mil_ws));
    rows.push_back(row("w+s-swws", true, WeakMode::sw_ws));
  } else {
    const auto row = [&](const char* name, ShiftMode mode) {
      BenchRow r{name, cfg.scheme, cfg.shift};
      r.scheme.use_strong = true;
      r.scheme.use_weak = false;
      r.scheme.weak_mode = WeakMode::plain;
      r.shift.mode = mode;
      return r;
    };
    rows.push_back(row("s-only", ShiftMode::none));
    rows.push_back(row("s-only-jitter", ShiftMode::color_jitter));
    rows.push_back(row("s-only-stain", ShiftMode::stain_transfer));
    rows.push_back(row("mmd", ShiftMode::mmd));
    rows.push_back(row("coral", ShiftMode::coral));
    rows.push_back(row("adversarial", ShiftMode::adversarial));
  }
  return rows;
}

struct BenchResult {
  std::vector<std::pair<std::string, RunReport>> rows;
  std::string config_hash;
  std::size_t reused_parts = 0;  // folds restored from a previous interrupted run
};

// Fixed-precision table in the benchmark layout: one row per strategy,
// mean (+- stdev) for AUC, accuracy and Kendall tau.
inline std::string format_report_table(const std::vector<std::pair<std::string, RunReport>>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %-18s %-18s %-18s\n", "scheme", "AUC (stdev)",
                "accuracy (stdev)", "Kendall tau (stdev)");
  out += line;
  for (const auto& [name, report] : rows) {
    std::snprintf(line, sizeof(line), "%-16s %.3f (+- %.3f)    %.3f (+- %.3f)    %.3f (+- %.3f)\n",
                  name.c_str(), report.mean_auc, report.std_auc, report.mean_accuracy,
                  report.std_accuracy, report.mean_tau, report.std_tau);
    out += line;
  }
  return out;
}

namespace detail {

inline json fold_part_json(const std::string& hash, BenchTable table, std::size_t row,
                           const std::string& row_name, std::size_t fold, const FoldMetrics& m) {
  return json{{"config_hash", hash},
              {"table", bench_table_name(table)},
              {"row", row},
              {"row_name", row_name},
              {"fold", fold},
              {"seed", m.seed},
              {"auc", m.auc},
              {"accuracy", m.accuracy},
              {"kendall_tau", m.kendall_tau}};
}

inline std::optional<FoldMetrics> load_fold_part(const std::filesystem::path& path,
                                                 const std::string& hash, BenchTable table) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  json j;
  try {
    is >> j;
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
  if (!j.is_object() || j.value("config_hash", "") != hash ||
      j.value("table", "") != bench_table_name(table)) {
    return std::nullopt;
  }
  FoldMetrics m;
  m.auc = j.value("auc", 0.0);
  m.accuracy = j.value("accuracy", 0.0);
  m.kendall_tau = j.value("kendall_tau", 0.0);
  m.seed = j.value("seed", std::uint64_t{0});
  return m;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

}  // namespace detail

inline json run_report_json(const RunReport& r) {
  json folds = json::array();
  for (const FoldMetrics& m : r.folds) {
    folds.push_back(json{{"auc", m.auc},
                         {"accuracy", m.accuracy},
                         {"kendall_tau", m.kendall_tau},
                         {"seed", m.seed}});
  }
  return json{{"folds", folds},
              {"mean_auc", r.mean_auc},
              {"std_auc", r.std_auc},
              {"mean_accuracy", r.mean_accuracy},
              {"std_accuracy", r.std_accuracy},
              {"mean_tau", r.mean_tau},
              {"std_tau", r.std_tau},
              {"config_hash", r.config_hash},
              {"master_seed", r.master_seed}};
}

// Full benchmark sweep: all table rows x CV folds, resumable at fold
// granularity through parts/ files keyed by the config hash. Tasks run on a
// bounded worker pool; part writes go through a single mutex-held writer.
// All emitted files are byte-deterministic in (config, seed).
inline BenchResult run_benchmark(const ExperimentConfig& cfg, BenchTable table,
                                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (cfg.seed == 0) throw ConfigError("config.seed: must be nonzero");
  if (table == BenchTable::shift && cfg.gen.substrate != Substrate::images) {
    throw ConfigError(
        "config.gen.substrate: the shift benchmark needs the image substrate "
        "(color augmentations act on images)");
  }

  const fs::path root(out_dir);
  fs::create_directories(root / "parts");

  Dataset dataset;
  std::string dataset_note;
  if (!cfg.dataset_path.empty()) {
    dataset = load_dataset(cfg.dataset_path);
    std::ifstream is(cfg.dataset_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    dataset_note = "file:" + hex64(fnv1a64(bytes));
  } else {
    dataset = generate_dataset(cfg.gen);
    dataset_note = "generated:seed=" + std::to_string(cfg.gen.seed);
  }

  const std::vector<BenchRow> rows = benchmark_rows(cfg, table);
  const std::vector<FoldPlan> plans = make_fold_plans(dataset.bags, cfg.eval, cfg.seed);
  const std::string hash = config_hash(cfg);

  struct Task {
    std::size_t row, fold;
  };
  std::vector<Task> tasks;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t f = 0; f < plans.size(); ++f) tasks.push_back({r, f});
  }

  std::vector<std::vector<FoldMetrics>> results(rows.size(),
                                                std::vector<FoldMetrics>(plans.size()));
  std::vector<Task> pending;
  std::size_t reused = 0;
  for (const Task& t : tasks) {
    const fs::path part = root / "parts" /
                          ("row" + std::to_string(t.row) + "_fold" + std::to_string(t.fold) +
                           ".json");
    if (auto m = detail::load_fold_part(part, hash, table)) {
      results[t.row][t.fold] = *m;
      ++reused;
    } else {
      pending.push_back(t);
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex write_mutex;
  std::exception_ptr first_error;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const Task t = pending[i];
      try {
        const FoldMetrics m = run_fold(dataset, plans[t.fold], cfg.model, rows[t.row].scheme,
                                       rows[t.row].shift, cfg.eval, cfg.stop);
        std::lock_guard<std::mutex> lock(write_mutex);
        results[t.row][t.fold] = m;
        const fs::path part = root / "parts" /
                              ("row" + std::to_string(t.row) + "_fold" + std::to_string(t.fold) +
                               ".json");
        detail::write_text_file(
            part, detail::fold_part_json(hash, table, t.row, rows[t.row].name, t.fold, m).dump(1) +
                      "\n");
      } catch (...) {
        std::lock_guard<std::mutex> lock(write_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.eval.workers, pending.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  BenchResult out;
  out.config_hash = hash;
  out.reused_parts = reused;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    RunReport report = aggregate_report(results[r], cfg.seed);
    report.config_hash = hash;
    out.rows.emplace_back(rows[r].name, std::move(report));
  }

  // report.json
  json report_rows = json::array();
  for (const auto& [name, report] : out.rows) {
    json rj = run_report_json(report);
    rj["name"] = name;
    report_rows.push_back(rj);
  }
  const json report_json{{"kind", "weakstrong-benchmark-report"},
                         {"table", bench_table_name(table)},
                         {"config_hash", hash},
                         {"rows", report_rows}};
  detail::write_text_file(root / "report.json", report_json.dump(1) + "\n");

  // per-fold CSV
  std::string csv = "table,row,scheme,fold,seed,auc,accuracy,kendall_tau\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t f = 0; f < plans.size(); ++f) {
      const FoldMetrics& m = results[r][f];
      csv += std::string(bench_table_name(table)) + "," + std::to_string(r) + "," + rows[r].name +
             "," + std::to_string(f) + "," + std::to_string(m.seed) + "," +
             format_double(m.auc) + "," + format_double(m.accuracy) + "," +
             format_double(m.kendall_tau) + "\n";
    }
  }
  detail::write_text_file(root / "report.csv", csv);

  detail::write_text_file(root / "table.txt", format_report_table(out.rows));

  // manifest: everything needed to reproduce the run byte-for-byte
  json fold_seeds = json::array();
  for (const FoldPlan& p : plans) fold_seeds.push_back(p.train_seed);
  json row_names = json::array();
  for (const BenchRow& r : rows) row_names.push_back(r.name);
  const json manifest{{"kind", "weakstrong-benchmark-manifest"},
                      {"tool_version", kVersion},
                      {"table", bench_table_name(table)},
                      {"config_hash", hash},
                      {"config", experiment_config_json(cfg)},
                      {"dataset", dataset_note},
                      {"fold_seeds", fold_seeds},
                      {"rows", row_names}};
  detail::write_text_file(root / "manifest.json", manifest.dump(1) + "\n");
  return out;
}

}  // namespace weakstrong
