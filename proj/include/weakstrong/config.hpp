#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"
#include "weakstrong/cv.hpp"
#include "weakstrong/error.hpp"
#include "weakstrong/model.hpp"
#include "weakstrong/schemes.hpp"
#include "weakstrong/shift.hpp"
#include "weakstrong/synthdata.hpp"
#include "weakstrong/util.hpp"

namespace weakstrong {

using json = nlohmann::json;

// Everything one experiment needs: dataset recipe, supervision scheme, shift
// strategy, model and evaluation settings. The seed is mandatory; runs never
// fall back to wall-clock entropy.
struct ExperimentConfig {
  GenConfig gen = default_gen_config();
  ModelConfig model{};
  SchemeConfig scheme{};
  ShiftConfig shift{};
  EvalConfig eval{};
  StopPolicy stop{};
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string dataset_path;  // optional pre-generated dataset file

  void validate() const {
    gen.validate();
    model.validate();
    scheme.validate();
    shift.validate();
    eval.validate();
  }
};

namespace cfgio {

// Strict reader: unknown keys and type mismatches are config errors that
// name the offending field.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& item : j_.items()) {
      bool known = false;
      for (const char* k : keys) {
        if (item.key() == k) {
          known = true;
          break;
        }
      }
      if (!known) throw ConfigError(path_ + "." + item.key() + ": unknown field");
    }
  }

  double number(const char* key, double def) const {
    if (!has(key)) return def;
    return as_number(key);
  }

  std::uint64_t uinteger(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    return as_uint(key);
  }

  std::uint64_t uinteger_required(const char* key) const {
    if (!has(key)) throw ConfigError(path_ + "." + key + ": required field missing");
    return as_uint(key);
  }

  bool flag(const char* key, bool def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw ConfigError(field(key) + ": expected a boolean");
    return j_.at(key).get<bool>();
  }

  std::string str(const char* key, const std::string& def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) throw ConfigError(field(key) + ": expected a string");
    return j_.at(key).get<std::string>();
  }

  std::vector<double> number_list(const char* key) const {
    const json& v = child(key);
    if (!v.is_array()) throw ConfigError(field(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
      if (!e.is_number()) throw ConfigError(field(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const json& child(const char* key) const {
    if (!has(key)) throw ConfigError(field(key) + ": required field missing");
    return j_.at(key);
  }
  std::string field(const char* key) const { return path_ + "." + key; }
  const json& raw() const { return j_; }

 private:
  double as_number(const char* key) const {
    if (!j_.at(key).is_number()) throw ConfigError(field(key) + ": expected a number");
    return j_.at(key).get<double>();
  }

  std::uint64_t as_uint(const char* key) const {
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(field(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  const json& j_;
  std::string path_;
};

template <typename Enum>
Enum parse_enum(const Reader& r, const char* key, const char* def,
                std::initializer_list<std::pair<const char*, Enum>> table) {
  const std::string v = r.str(key, def);
  for (const auto& [name, value] : table) {
    if (v == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError(r.field(key) + ": '" + v + "' is not one of [" + allowed + "]");
}

template <typename Enum>
const char* enum_name(Enum e, std::initializer_list<std::pair<const char*, Enum>> table) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

inline std::initializer_list<std::pair<const char*, WeakMode>> weak_mode_table() {
  static const std::initializer_list<std::pair<const char*, WeakMode>> t{
      {"plain", WeakMode::plain}, {"mil_ws", WeakMode::mil_ws}, {"sw_ws", WeakMode::sw_ws}};
  return t;
}

inline std::initializer_list<std::pair<const char*, OptKind>> optimizer_table() {
  static const std::initializer_list<std::pair<const char*, OptKind>> t{{"sgd", OptKind::sgd},
                                                                        {"adam", OptKind::adam}};
  return t;
}

inline std::initializer_list<std::pair<const char*, MomentMode>> moments_table() {
  static const std::initializer_list<std::pair<const char*, MomentMode>> t{
      {"shared", MomentMode::shared}, {"split", MomentMode::split}};
  return t;
}

inline std::initializer_list<std::pair<const char*, MilConfidence>> mil_confidence_table() {
  static const std::initializer_list<std::pair<const char*, MilConfidence>> t{
      {"label_prob", MilConfidence::label_prob}, {"max_prob", MilConfidence::max_prob}};
  return t;
}

inline std::initializer_list<std::pair<const char*, ShiftMode>> shift_mode_table() {
  static const std::initializer_list<std::pair<const char*, ShiftMode>> t{
      {"none", ShiftMode::none},           {"color_jitter", ShiftMode::color_jitter},
      {"stain_transfer", ShiftMode::stain_transfer}, {"mmd", ShiftMode::mmd},
      {"coral", ShiftMode::coral},         {"adversarial", ShiftMode::adversarial}};
  return t;
}

inline std::initializer_list<std::pair<const char*, Substrate>> substrate_table() {
  static const std::initializer_list<std::pair<const char*, Substrate>> t{
      {"features", Substrate::features}, {"images", Substrate::images}};
  return t;
}

inline std::initializer_list<std::pair<const char*, TauVariant>> tau_table() {
  static const std::initializer_list<std::pair<const char*, TauVariant>> t{{"a", TauVariant::a},
                                                                           {"b", TauVariant::b}};
  return t;
}

}  // namespace cfgio

// ---------------------------------------------------------------------------
// Parsers (strict) and symmetric writers

inline ModelConfig parse_model_config(const json& j, const std::string& path,
                                      std::size_t default_input_dim) {
  cfgio::Reader r(j, path);
  r.allow({"input_dim", "hidden_dims", "num_classes"});
  ModelConfig cfg;
  cfg.input_dim = r.uinteger("input_dim", default_input_dim);
  if (r.has("hidden_dims")) {
    cfg.hidden_dims.clear();
    for (double v : r.number_list("hidden_dims")) {
      if (v < 1) throw ConfigError(r.field("hidden_dims") + ": entries must be >= 1");
      cfg.hidden_dims.push_back(static_cast<std::size_t>(v));
    }
  }
  cfg.num_classes = r.uinteger("num_classes", cfg.num_classes);
  return cfg;
}

inline json model_config_json(const ModelConfig& cfg) {
  return json{{"input_dim", cfg.input_dim},
              {"hidden_dims", cfg.hidden_dims},
              {"num_classes", cfg.num_classes}};
}

inline SchemeConfig parse_scheme_config(const json& j, const std::string& path) {
  cfgio::Reader r(j, path);
  r.allow({"use_strong", "use_weak", "weak_mode", "strong_batch", "weak_batch", "mil_fraction",
           "optimizer", "learning_rate", "adam_moments", "mil_confidence"});
  SchemeConfig cfg;
  cfg.use_strong = r.flag("use_strong", cfg.use_strong);
  cfg.use_weak = r.flag("use_weak", cfg.use_weak);
  cfg.weak_mode = cfgio::parse_enum(r, "weak_mode", "plain", cfgio::weak_mode_table());
  cfg.strong_batch = r.uinteger("strong_batch", cfg.strong_batch);
  cfg.weak_batch = r.uinteger("weak_batch", cfg.weak_batch);
  cfg.mil_fraction = r.number("mil_fraction", cfg.mil_fraction);
  cfg.optimizer = cfgio::parse_enum(r, "optimizer", "adam", cfgio::optimizer_table());
  cfg.learning_rate = r.number("learning_rate", cfg.learning_rate);
  cfg.adam_moments = cfgio::parse_enum(r, "adam_moments", "shared", cfgio::moments_table());
  cfg.mil_confidence =
      cfgio::parse_enum(r, "mil_confidence", "label_prob", cfgio::mil_confidence_table());
  return cfg;
}

inline json scheme_config_json(const SchemeConfig& cfg) {
  return json{{"use_strong", cfg.use_strong},
              {"use_weak", cfg.use_weak},
              {"weak_mode", cfgio::enum_name(cfg.weak_mode, cfgio::weak_mode_table())},
              {"strong_batch", cfg.strong_batch},
              {"weak_batch", cfg.weak_batch},
              {"mil_fraction", cfg.mil_fraction},
              {"optimizer", cfgio::enum_name(cfg.optimizer, cfgio::optimizer_table())},
              {"learning_rate", cfg.learning_rate},
              {"adam_moments", cfgio::enum_name(cfg.adam_moments, cfgio::moments_table())},
              {"mil_confidence",
               cfgio::enum_name(cfg.mil_confidence, cfgio::mil_confidence_table())}};
}

inline ShiftConfig parse_shift_config(const json& j, const std::string& path) {
  cfgio::Reader r(j, path);
  r.allow({"mode", "penalty_weight", "kernel_bandwidth", "grl_lambda", "jitter_strength"});
  ShiftConfig cfg;
  cfg.mode = cfgio::parse_enum(r, "mode", "none", cfgio::shift_mode_table());
  cfg.penalty_weight = r.number("penalty_weight", cfg.penalty_weight);
  if (r.has("kernel_bandwidth")) {
    const json& v = r.child("kernel_bandwidth");
    if (v.is_string()) {
      if (v.get<std::string>() != "median_heuristic") {
        throw ConfigError(r.field("kernel_bandwidth") +
                          ": expected 'median_heuristic' or a positive number");
      }
      cfg.kernel_sigma = 0.0;
    } else if (v.is_number()) {
      cfg.kernel_sigma = v.get<double>();
      if (cfg.kernel_sigma <= 0.0) {
        throw ConfigError(r.field("kernel_bandwidth") + ": fixed bandwidth must be > 0");
      }
    } else {
      throw ConfigError(r.field("kernel_bandwidth") +
                        ": expected 'median_heuristic' or a positive number");
    }
  }
  cfg.grl_lambda = r.number("grl_lambda", cfg.grl_lambda);
  cfg.jitter_strength = r.number("jitter_strength", cfg.jitter_strength);
  return cfg;
}

inline json shift_config_json(const ShiftConfig& cfg) {
  json j{{"mode", cfgio::enum_name(cfg.mode, cfgio::shift_mode_table())},
         {"penalty_weight", cfg.penalty_weight},
         {"grl_lambda", cfg.grl_lambda},
         {"jitter_strength", cfg.jitter_strength}};
  if (cfg.kernel_sigma > 0.0) {
    j["kernel_bandwidth"] = cfg.kernel_sigma;
  } else {
    j["kernel_bandwidth"] = "median_heuristic";
  }
  return j;
}

inline EvalConfig parse_eval_config(const json& j, const std::string& path) {
  cfgio::Reader r(j, path);
  r.allow({"folds", "holdout_fraction", "threshold", "tau", "stratify", "workers"});
  EvalConfig cfg;
  cfg.folds = r.uinteger("folds", cfg.folds);
  cfg.holdout_fraction = r.number("holdout_fraction", cfg.holdout_fraction);
  cfg.threshold = r.number("threshold", cfg.threshold);
  cfg.tau = cfgio::parse_enum(r, "tau", "b", cfgio::tau_table());
  const std::string strat = r.str("stratify", "binary");
  if (strat == "binary") {
    cfg.stratify_by_group = false;
  } else if (strat == "group") {
    cfg.stratify_by_group = true;
  } else {
    throw ConfigError(r.field("stratify") + ": expected 'binary' or 'group'");
  }
  cfg.workers = r.uinteger("workers", cfg.workers);
  return cfg;
}

inline json eval_config_json(const EvalConfig& cfg) {
  return json{{"folds", cfg.folds},
              {"holdout_fraction", cfg.holdout_fraction},
              {"threshold", cfg.threshold},
              {"tau", cfgio::enum_name(cfg.tau, cfgio::tau_table())},
              {"stratify", cfg.stratify_by_group ? "group" : "binary"},
              {"workers", cfg.workers}};
}

inline StainParams parse_stain_params(const json& j, const std::string& path) {
  cfgio::Reader r(j, path);
  r.allow({"hematoxylin", "eosin", "background_h", "background_e", "nucleus_h", "blob_sigma",
           "intensity"});
  StainParams sp;
  auto vec3 = [&](const char* key, std::array<double, 3>& out) {
    if (!r.has(key)) return;
    const std::vector<double> v = r.number_list(key);
    if (v.size() != 3) throw ConfigError(r.field(key) + ": expected 3 entries");
    std::copy(v.begin(), v.end(), out.begin());
  };
  vec3("hematoxylin", sp.hematoxylin);
  vec3("eosin", sp.eosin);
  sp.background_h = r.number("background_h", sp.background_h);
  sp.background_e = r.number("background_e", sp.background_e);
  sp.nucleus_h = r.number("nucleus_h", sp.nucleus_h);
  sp.blob_sigma = r.number("blob_sigma", sp.blob_sigma);
  sp.intensity = r.number("intensity", sp.intensity);
  return sp;
}

inline json stain_params_json(const StainParams& sp) {
  return json{{"hematoxylin", sp.hematoxylin}, {"eosin", sp.eosin},
              {"background_h", sp.background_h}, {"background_e", sp.background_e},
              {"nucleus_h", sp.nucleus_h},       {"blob_sigma", sp.blob_sigma},
              {"intensity", sp.intensity}};
}

inline GenConfig parse_gen_config(const json& j, const std::string& path,
                                  std::uint64_t default_seed) {
  cfgio::Reader r(j, path);
  r.allow({"n_bags", "instances_per_bag", "primary_fraction", "benign_fraction", "group_weights",
           "input_dim", "pattern_stats", "shift", "n_strong", "strong_pattern_weights",
           "substrate", "image", "seed"});
  GenConfig cfg;
  cfg.n_bags = r.uinteger("n_bags", cfg.n_bags);
  cfg.instances_per_bag = r.uinteger("instances_per_bag", cfg.instances_per_bag);
  cfg.primary_fraction = r.number("primary_fraction", cfg.primary_fraction);
  cfg.benign_fraction = r.number("benign_fraction", cfg.benign_fraction);
  cfg.input_dim = r.uinteger("input_dim", cfg.input_dim);
  cfg.pattern_stats = default_pattern_stats(cfg.input_dim);
  cfg.shift = default_affine_shift(cfg.input_dim);
  if (r.has("group_weights")) {
    const std::vector<double> w = r.number_list("group_weights");
    if (w.size() != 5) throw ConfigError(r.field("group_weights") + ": expected 5 entries");
    std::copy(w.begin(), w.end(), cfg.group_weights.begin());
  }
  if (r.has("pattern_stats")) {
    cfgio::Reader ps(r.child("pattern_stats"), r.field("pattern_stats"));
    ps.allow({"benign", "pattern3", "pattern4", "pattern5"});
    const char* names[4] = {"benign", "pattern3", "pattern4", "pattern5"};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!ps.has(names[i])) continue;
      cfgio::Reader one(ps.child(names[i]), ps.field(names[i]));
      one.allow({"mean", "std"});
      cfg.pattern_stats[i].mean = one.number_list("mean");
      cfg.pattern_stats[i].std_dev = one.number_list("std");
    }
  }
  if (r.has("shift")) {
    const json& sj = r.child("shift");
    if (sj.is_string() && sj.get<std::string>() == "none") {
      cfg.shift = AffineShift{};
    } else {
      cfgio::Reader sr(sj, r.field("shift"));
      sr.allow({"a", "b"});
      const json& aj = sr.child("a");
      if (!aj.is_array() || aj.empty()) throw ConfigError(sr.field("a") + ": expected a matrix");
      const std::size_t rows = aj.size();
      Tensor2D a(rows, aj.at(0).size());
      for (std::size_t i = 0; i < rows; ++i) {
        const json& row = aj.at(i);
        if (!row.is_array() || row.size() != a.cols) {
          throw ConfigError(sr.field("a") + ": ragged matrix");
        }
        for (std::size_t c = 0; c < a.cols; ++c) a.at(i, c) = row.at(c).get<double>();
      }
      cfg.shift.a = a;
      cfg.shift.b = sr.number_list("b");
    }
  }
  cfg.n_strong = r.uinteger("n_strong", cfg.n_strong);
  if (r.has("strong_pattern_weights")) {
    const std::vector<double> w = r.number_list("strong_pattern_weights");
    if (w.size() != 4) {
      throw ConfigError(r.field("strong_pattern_weights") + ": expected 4 entries");
    }
    std::copy(w.begin(), w.end(), cfg.strong_pattern_weights.begin());
  }
  cfg.substrate = cfgio::parse_enum(r, "substrate", "features", cfgio::substrate_table());
  if (r.has("image")) {
    cfgio::Reader ir(r.child("image"), r.field("image"));
    ir.allow({"patch_size", "density", "density_jitter", "candidate_patches", "weak_stain",
              "strong_stain"});
    cfg.image.patch_size = ir.uinteger("patch_size", cfg.image.patch_size);
    if (ir.has("density")) {
      const std::vector<double> d = ir.number_list("density");
      if (d.size() != 4) throw ConfigError(ir.field("density") + ": expected 4 entries");
      std::copy(d.begin(), d.end(), cfg.image.density.begin());
    }
    cfg.image.density_jitter = ir.number("density_jitter", cfg.image.density_jitter);
    cfg.image.candidate_patches = ir.uinteger("candidate_patches", cfg.image.candidate_patches);
    if (ir.has("weak_stain")) {
      cfg.image.weak_stain = parse_stain_params(ir.child("weak_stain"), ir.field("weak_stain"));
    }
    if (ir.has("strong_stain")) {
      cfg.image.strong_stain =
          parse_stain_params(ir.child("strong_stain"), ir.field("strong_stain"));
    }
  }
  cfg.seed = r.uinteger("seed", default_seed);
  cfg.validate();
  return cfg;
}

inline json gen_config_json(const GenConfig& cfg) {
  json j{{"n_bags", cfg.n_bags},
         {"instances_per_bag", cfg.instances_per_bag},
         {"primary_fraction", cfg.primary_fraction},
         {"benign_fraction", cfg.benign_fraction},
         {"group_weights", cfg.group_weights},
         {"input_dim", cfg.input_dim},
         {"n_strong", cfg.n_strong},
         {"strong_pattern_weights", cfg.strong_pattern_weights},
         {"substrate", cfgio::enum_name(cfg.substrate, cfgio::substrate_table())},
         {"seed", cfg.seed}};
  json ps;
  const char* names[4] = {"benign", "pattern3", "pattern4", "pattern5"};
  for (std::size_t i = 0; i < 4; ++i) {
    ps[names[i]] = json{{"mean", cfg.pattern_stats[i].mean},
                        {"std", cfg.pattern_stats[i].std_dev}};
  }
  j["pattern_stats"] = ps;
  if (cfg.shift.is_identity()) {
    j["shift"] = "none";
  } else {
    json rows = json::array();
    for (std::size_t i = 0; i < cfg.shift.a.rows; ++i) {
      json row = json::array();
      for (std::size_t c = 0; c < cfg.shift.a.cols; ++c) row.push_back(cfg.shift.a.at(i, c));
      rows.push_back(row);
    }
    j["shift"] = json{{"a", rows}, {"b", cfg.shift.b}};
  }
  j["image"] = json{{"patch_size", cfg.image.patch_size},
                    {"density", cfg.image.density},
                    {"density_jitter", cfg.image.density_jitter},
                    {"candidate_patches", cfg.image.candidate_patches},
                    {"weak_stain", stain_params_json(cfg.image.weak_stain)},
                    {"strong_stain", stain_params_json(cfg.image.strong_stain)}};
  return j;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
  cfgio::Reader r(j, "config");
  r.allow({"seed", "output_dir", "epochs", "patience", "val_metric", "dataset", "gen", "model",
           "scheme", "shift", "eval"});
  ExperimentConfig cfg;
  cfg.seed = r.uinteger_required("seed");
  cfg.output_dir = r.str("output_dir", cfg.output_dir);
  cfg.stop.max_epochs = r.uinteger("epochs", cfg.stop.max_epochs);
  cfg.stop.patience = r.uinteger("patience", cfg.stop.patience);
  const std::string vm = r.str("val_metric", "ce");
  if (vm == "ce") {
    cfg.stop.metric = ValMetric::ce;
  } else if (vm == "auc") {
    cfg.stop.metric = ValMetric::auc;
  } else {
    throw ConfigError("config.val_metric: expected 'ce' or 'auc'");
  }
  cfg.dataset_path = r.str("dataset", "");
  if (r.has("gen")) {
    cfg.gen = parse_gen_config(r.child("gen"), "config.gen", cfg.seed);
  } else {
    cfg.gen.seed = cfg.seed;
  }
  cfg.model = r.has("model")
                  ? parse_model_config(r.child("model"), "config.model", cfg.gen.input_dim)
                  : ModelConfig{.input_dim = cfg.gen.input_dim};
  if (r.has("scheme")) cfg.scheme = parse_scheme_config(r.child("scheme"), "config.scheme");
  if (r.has("shift")) cfg.shift = parse_shift_config(r.child("shift"), "config.shift");
  if (r.has("eval")) cfg.eval = parse_eval_config(r.child("eval"), "config.eval");
  cfg.validate();
  return cfg;
}

inline json experiment_config_json(const ExperimentConfig& cfg) {
  json j{{"seed", cfg.seed},
         {"output_dir", cfg.output_dir},
         {"epochs", cfg.stop.max_epochs},
         {"patience", cfg.stop.patience},
         {"val_metric", cfg.stop.metric == ValMetric::auc ? "auc" : "ce"},
         {"gen", gen_config_json(cfg.gen)},
         {"model", model_config_json(cfg.model)},
         {"scheme", scheme_config_json(cfg.scheme)},
         {"shift", shift_config_json(cfg.shift)},
         {"eval", eval_config_json(cfg.eval)}};
  if (!cfg.dataset_path.empty()) j["dataset"] = cfg.dataset_path;
  return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  try {
    return parse_experiment_config(j);
  } catch (const json::exception& e) {
    // whatever slipped past the typed readers is still a config problem
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

// Stable 64-bit digest of the canonical config serialization; identifies a
// run in manifests and makes sweep parts resumable.
inline std::string config_hash(const ExperimentConfig& cfg) {
  return hex64(fnv1a64(experiment_config_json(cfg).dump()));
}

}  // namespace weakstrong
