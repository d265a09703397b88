#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/metrics.hpp"
#include "weakstrong/schemes.hpp"
#include "weakstrong/synthdata.hpp"

namespace weakstrong {

struct EvalConfig {
  std::size_t folds = 5;
  double holdout_fraction = 0.2;  // training bags held out for early stopping
  double threshold = 0.5;         // slide-score accuracy threshold
  TauVariant tau = TauVariant::b;
  bool stratify_by_group = false;  // default stratifies on the binary label
  std::size_t workers = 1;

  void validate() const {
    if (folds < 2) throw ConfigError("eval.folds: must be >= 2");
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
      throw ConfigError("eval.holdout_fraction: must be in (0, 1)");
    }
    if (workers < 1) throw ConfigError("eval.workers: must be >= 1");
  }
};

struct FoldMetrics {
  double auc = 0.0;
  double accuracy = 0.0;
  double kendall_tau = 0.0;
  std::uint64_t seed = 0;
};

struct RunReport {
  std::vector<FoldMetrics> folds;
  double mean_auc = 0.0, std_auc = 0.0;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_tau = 0.0, std_tau = 0.0;
  std::string config_hash;  // filled by the caller that owns the full config
  std::uint64_t master_seed = 0;
};

namespace detail {

constexpr std::uint64_t kFoldSplitTag = 0x5b117;
constexpr std::uint64_t kHoldoutTag = 0x801d;
constexpr std::uint64_t kFoldTrainTag = 0xf01d;

inline void mean_std(const std::vector<double>& v, double& mean, double& stdev) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  stdev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace detail

// Stratified k-fold assignment over bags. Strata are shuffled independently
// and dealt round-robin, so folds are balanced per stratum.
inline std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<Bag>& bags,
                                                              std::size_t k, bool by_group,
                                                              Rng rng) {
  if (bags.size() < 2 * k) {
    throw ConfigError("cv: needs at least " + std::to_string(2 * k) + " bags for " +
                      std::to_string(k) + " folds");
  }
  std::vector<std::vector<std::size_t>> strata(by_group ? 5 : 2);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const std::size_t s = by_group ? static_cast<std::size_t>(bags[i].group)
                                   : static_cast<std::size_t>(bags[i].weak_label);
    strata[s].push_back(i);
  }
  std::vector<std::vector<std::size_t>> folds(k);
  for (auto& stratum : strata) {
    rng.shuffle(stratum);
    for (std::size_t i = 0; i < stratum.size(); ++i) folds[i % k].push_back(stratum[i]);
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());

  for (std::size_t f = 0; f < k; ++f) {
    bool has_low = false, has_high = false;
    for (std::size_t bi : folds[f]) {
      (bags[bi].weak_label == kLabelHigh ? has_high : has_low) = true;
    }
    if (!has_low || !has_high) {
      throw ConfigError("cv: fold " + std::to_string(f) +
                        " has a single class; add bags or reseed");
    }
  }
  return folds;
}

// Instance-level training views for one fold (or one standalone run).
inline TrainData build_train_data(const std::vector<Bag>& bags,
                                  const std::vector<std::size_t>& train_bag_idx,
                                  const std::vector<std::size_t>& holdout_bag_idx,
                                  const std::vector<Instance>& strong, const GenConfig& cfg) {
  const bool images = cfg.substrate == Substrate::images;
  std::size_t n_train = 0, n_val = 0;
  for (std::size_t bi : train_bag_idx) n_train += bags[bi].instances.size();
  for (std::size_t bi : holdout_bag_idx) n_val += bags[bi].instances.size();
  if (n_train == 0) throw ValueError("build_train_data: no training instances");

  TrainData data;
  data.weak_x = Tensor2D(n_train, cfg.input_dim);
  data.weak_y.resize(n_train);
  data.weak_bags.resize(n_train);
  data.val_x = Tensor2D(n_val, cfg.input_dim);
  data.val_y.resize(n_val);

  std::size_t r = 0;
  for (std::size_t bi : train_bag_idx) {
    for (const Instance& inst : bags[bi].instances) {
      for (std::size_t c = 0; c < cfg.input_dim; ++c) data.weak_x.at(r, c) = inst.features[c];
      data.weak_y[r] = inst.weak_label.value();
      data.weak_bags[r] = inst.bag_id;
      if (images) data.weak_images.push_back(inst.image);
      ++r;
    }
  }
  r = 0;
  data.val_bags.resize(n_val);
  for (std::size_t bi : holdout_bag_idx) {
    for (const Instance& inst : bags[bi].instances) {
      for (std::size_t c = 0; c < cfg.input_dim; ++c) data.val_x.at(r, c) = inst.features[c];
      data.val_y[r] = inst.weak_label.value();
      data.val_bags[r] = inst.bag_id;
      ++r;
    }
  }

  data.strong_x = Tensor2D(strong.size(), cfg.input_dim);
  data.strong_y.resize(strong.size());
  for (std::size_t i = 0; i < strong.size(); ++i) {
    for (std::size_t c = 0; c < cfg.input_dim; ++c) data.strong_x.at(i, c) = strong[i].features[c];
    data.strong_y[i] = strong[i].strong_label.value();
    if (images) data.strong_images.push_back(strong[i].image);
  }

  if (images) {
    data.projection = make_projection(cfg.seed, cfg.image.patch_size, cfg.input_dim);
    data.strong_shift = cfg.shift;
  }
  return data;
}

// Splits training bags into train/holdout, stratified on the binary label so
// the holdout keeps both classes whenever possible.
inline void split_holdout(const std::vector<Bag>& bags, const std::vector<std::size_t>& train_all,
                          double fraction, Rng rng, std::vector<std::size_t>& train_out,
                          std::vector<std::size_t>& holdout_out) {
  std::vector<std::size_t> strata[2];
  for (std::size_t bi : train_all) {
    strata[static_cast<std::size_t>(bags[bi].weak_label)].push_back(bi);
  }
  train_out.clear();
  holdout_out.clear();
  for (auto& stratum : strata) {
    rng.shuffle(stratum);
    std::size_t take = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(stratum.size())));
    if (stratum.size() >= 2) take = std::max<std::size_t>(1, std::min(take, stratum.size() - 1));
    else take = 0;
    for (std::size_t i = 0; i < stratum.size(); ++i) {
      (i < take ? holdout_out : train_out).push_back(stratum[i]);
    }
  }
  std::sort(train_out.begin(), train_out.end());
  std::sort(holdout_out.begin(), holdout_out.end());
}

// Scores every bag in the fold's test set with the trained model.
inline void score_test_bags(const ModelParams& params, const std::vector<Bag>& bags,
                            const std::vector<std::size_t>& test_idx,
                            std::vector<double>& scores, std::vector<int>& labels,
                            std::vector<int>& groups) {
  scores.clear();
  labels.clear();
  groups.clear();
  for (std::size_t bi : test_idx) {
    const Bag& bag = bags[bi];
    Tensor2D x(bag.instances.size(), bag.instances.front().features.size());
    for (std::size_t i = 0; i < bag.instances.size(); ++i) {
      for (std::size_t c = 0; c < x.cols; ++c) x.at(i, c) = bag.instances[i].features[c];
    }
    const ForwardTrace trace = forward(params, x);
    scores.push_back(slide_score(argmax_rows(trace.probs)));
    labels.push_back(bag.weak_label);
    groups.push_back(static_cast<int>(bag.group));
  }
}

struct FoldPlan {
  std::vector<std::size_t> test, train, holdout;
  std::uint64_t train_seed = 0;
};

// Standalone (non-CV) split: a stratified holdout for early stopping, taken
// from the full bag set. Used by single training runs.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_holdout_split(
    const std::vector<Bag>& bags, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> all(bags.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> train, holdout;
  split_holdout(bags, all, fraction, Rng(seed).derive(detail::kHoldoutTag), train, holdout);
  return {std::move(train), std::move(holdout)};
}

// Builds the stratified fold plans, asserts the no-leakage invariants, and
// preflights metric definedness on every test fold. The plans depend only on
// (bags, eval, seed), so every benchmark row shares the same split.
inline std::vector<FoldPlan> make_fold_plans(const std::vector<Bag>& bags, const EvalConfig& eval,
                                             std::uint64_t seed) {
  eval.validate();
  const Rng root(seed);
  const auto folds = stratified_folds(bags, eval.folds, eval.stratify_by_group,
                                      root.derive(detail::kFoldSplitTag));

  // leakage assertion: folds must partition the bag set
  std::set<std::size_t> seen;
  for (const auto& fold : folds) {
    for (std::size_t bi : fold) {
      if (!seen.insert(bi).second) {
        throw VerificationError("cv: bag " + std::to_string(bi) + " in two test folds");
      }
    }
  }
  if (seen.size() != bags.size()) {
    throw VerificationError("cv: folds do not cover the bag set");
  }

  std::vector<FoldPlan> plans(folds.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldPlan& plan = plans[f];
    plan.test = folds[f];
    std::vector<std::size_t> rest;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(rest.begin(), rest.end());
    split_holdout(bags, rest, eval.holdout_fraction, root.derive(detail::kHoldoutTag + f),
                  plan.train, plan.holdout);
    plan.train_seed = root.derive(detail::kFoldTrainTag + f).state();

    // per-fold leakage assertion
    std::set<std::size_t> test_set(plan.test.begin(), plan.test.end());
    for (std::size_t bi : plan.train) {
      if (test_set.count(bi)) throw VerificationError("cv: test bag leaked into training");
    }
    for (std::size_t bi : plan.holdout) {
      if (test_set.count(bi)) throw VerificationError("cv: test bag leaked into holdout");
    }
    if (plan.train.size() + plan.holdout.size() + plan.test.size() != bags.size()) {
      throw VerificationError("cv: fold split does not partition the bag set");
    }

    // preflight: metrics must be defined on this test fold
    std::set<int> fold_groups;
    bool has_low = false, has_high = false;
    for (std::size_t bi : plan.test) {
      fold_groups.insert(static_cast<int>(bags[bi].group));
      (bags[bi].weak_label == kLabelHigh ? has_high : has_low) = true;
    }
    if (!has_low || !has_high || fold_groups.size() < 2) {
      throw ConfigError("cv: fold " + std::to_string(f) +
                        " cannot support AUC/tau (single class or single group)");
    }
  }
  return plans;
}

// Trains and scores one fold; fully isolated given its plan.
inline FoldMetrics run_fold(const Dataset& dataset, const FoldPlan& plan,
                            const ModelConfig& model_cfg, const SchemeConfig& scheme,
                            const ShiftConfig& shift, const EvalConfig& eval,
                            const StopPolicy& stop) {
  const TrainData data =
      build_train_data(dataset.bags, plan.train, plan.holdout, dataset.strong, dataset.config);
  const TrainResult trained = train_run(data, model_cfg, scheme, shift, stop, plan.train_seed);
  std::vector<double> scores;
  std::vector<int> labels, groups;
  score_test_bags(trained.params, dataset.bags, plan.test, scores, labels, groups);
  FoldMetrics m;
  m.auc = roc_auc(scores, labels);
  m.accuracy = accuracy(scores, labels, eval.threshold);
  m.kendall_tau = kendall_tau(scores, groups, eval.tau);
  m.seed = plan.train_seed;
  return m;
}

inline RunReport aggregate_report(std::vector<FoldMetrics> folds, std::uint64_t master_seed) {
  RunReport report;
  report.master_seed = master_seed;
  report.folds = std::move(folds);
  std::vector<double> aucs, accs, taus;
  for (const FoldMetrics& m : report.folds) {
    aucs.push_back(m.auc);
    accs.push_back(m.accuracy);
    taus.push_back(m.kendall_tau);
  }
  detail::mean_std(aucs, report.mean_auc, report.std_auc);
  detail::mean_std(accs, report.mean_accuracy, report.std_accuracy);
  detail::mean_std(taus, report.mean_tau, report.std_tau);
  return report;
}

// 5-fold (configurable) stratified cross validation over bags. Strong data
// participates in training for every fold and is never a test target. Folds
// run as isolated parallel tasks with derived seeds; results join in fold
// order.
inline RunReport cv_harness(const Dataset& dataset, const ModelConfig& model_cfg,
                            const SchemeConfig& scheme, const ShiftConfig& shift,
                            const EvalConfig& eval, const StopPolicy& stop,
                            std::uint64_t seed) {
  const std::vector<FoldPlan> plans = make_fold_plans(dataset.bags, eval, seed);
  std::vector<FoldMetrics> results(plans.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t f = next.fetch_add(1);
      if (f >= plans.size()) return;
      try {
        results[f] = run_fold(dataset, plans[f], model_cfg, scheme, shift, eval, stop);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t n_workers = std::min(eval.workers, plans.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return aggregate_report(std::move(results), seed);
}

}  // namespace weakstrong
