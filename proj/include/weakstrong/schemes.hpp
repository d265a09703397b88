#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/image.hpp"
#include "weakstrong/metrics.hpp"
#include "weakstrong/model.hpp"
#include "weakstrong/optim.hpp"
#include "weakstrong/rng.hpp"
#include "weakstrong/shift.hpp"
#include "weakstrong/synthdata.hpp"
#include "weakstrong/tensor.hpp"
#include "weakstrong/util.hpp"

namespace weakstrong {

enum class Source { strong, weak };

struct Batch {
  Tensor2D x;
  std::vector<int> y;
  Source source = Source::weak;
  std::vector<int> bag_ids;
};

enum class WeakMode { plain, mil_ws, sw_ws };
enum class MilConfidence { label_prob, max_prob };
enum class MomentMode { shared, split };

// Which supervision scheme drives a training run. use_strong/use_weak span
// the data-integration rows (W-only vs W+S) as well as the S-only rows of
// the covariate-shift benchmark.
struct SchemeConfig {
  bool use_strong = true;
  bool use_weak = true;
  WeakMode weak_mode = WeakMode::plain;
  std::size_t strong_batch = 32;
  std::size_t weak_batch = 128;
  double mil_fraction = 0.25;
  OptKind optimizer = OptKind::adam;
  double learning_rate = 1e-4;
  MomentMode adam_moments = MomentMode::shared;
  MilConfidence mil_confidence = MilConfidence::label_prob;
  bool force_unit_confidence = false;  // test hook: SW-WS collapses to the plain rule

  void validate() const {
    if (!use_strong && !use_weak) {
      throw ConfigError("scheme: at least one of use_strong/use_weak must be set");
    }
    if (strong_batch < 1) throw ConfigError("scheme.strong_batch: must be >= 1");
    if (weak_batch < 1) throw ConfigError("scheme.weak_batch: must be >= 1");
    if (mil_fraction <= 0.0 || mil_fraction > 1.0) {
      throw ConfigError("scheme.mil_fraction: must be in (0, 1]");
    }
    if (learning_rate <= 0.0) throw ConfigError("scheme.learning_rate: must be > 0");
  }
};

// c_i = predicted probability of the (weak) label: probs[i][y_i]. Softmax
// rows are strictly interior, so every c_i lands in (0, 1).
inline std::vector<double> confidence_scores(const Tensor2D& probs, const std::vector<int>& y) {
  if (y.size() != probs.rows) {
    throw DimensionError("confidence_scores: " + std::to_string(y.size()) + " labels for " +
                         std::to_string(probs.rows) + " rows");
  }
  std::vector<double> c(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= probs.cols) {
      throw ValueError("confidence_scores: label " + std::to_string(y[i]) + " out of range");
    }
    c[i] = probs.at(i, static_cast<std::size_t>(y[i]));
  }
  return c;
}

struct StepResult {
  ModelParams params;
  double loss = 0.0;
};

namespace detail {

// One optimizer step on the mean cross-entropy with explicit per-example
// weights; both labeled-step flavors share this path.
inline StepResult weighted_step(const ModelParams& params, Optimizer& opt, const Tensor2D& x,
                                const std::vector<int>& y, const std::vector<double>& weights) {
  const ForwardTrace trace = forward(params, x);
  CrossEntropyResult ce = cross_entropy(trace.probs, y, weights);
  const Gradients grads = backward(trace, params, ce.dlogits);
  StepResult out{opt.step(params, grads), ce.loss};
  return out;
}

}  // namespace detail

// One step on the unweighted mean cross-entropy over a strong batch.
inline StepResult strong_step(const ModelParams& params, Optimizer& opt, const Batch& b) {
  if (b.source != Source::strong) throw ValueError("strong_step: batch is not strong-sourced");
  return detail::weighted_step(params, opt, b.x, b.y, std::vector<double>(b.x.rows, 1.0));
}

// Weak supervision with every weight fixed at 1.
inline StepResult weak_step_plain(const ModelParams& params, Optimizer& opt, const Batch& b) {
  if (b.source != Source::weak) throw ValueError("weak_step_plain: batch is not weak-sourced");
  return detail::weighted_step(params, opt, b.x, b.y, std::vector<double>(b.x.rows, 1.0));
}

inline std::size_t mil_k(std::size_t batch_size, double fraction) {
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(batch_size)));
  return std::max<std::size_t>(1, k);
}

// Top-k most confident indices, ties broken by ascending index; returned in
// ascending index order.
inline std::vector<std::size_t> mil_select(const std::vector<double>& confidences, std::size_t k) {
  std::vector<std::size_t> idx(confidences.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct MilStepResult {
  ModelParams params;
  double loss = 0.0;                  // mean loss over the selected examples
  std::vector<std::size_t> selected;  // ascending indices into the batch
};

// Back-propagates only the top k = max(1, floor(fraction * |b|)) most
// confident predictions; the remaining examples contribute zero gradient.
inline MilStepResult weak_step_mil(const ModelParams& params, Optimizer& opt, const Batch& b,
                                   double mil_fraction,
                                   MilConfidence mode = MilConfidence::label_prob) {
  if (b.source != Source::weak) throw ValueError("weak_step_mil: batch is not weak-sourced");
  if (b.x.rows == 0) throw ValueError("weak_step_mil: empty batch");
  const ForwardTrace trace = forward(params, b.x);
  std::vector<double> conf;
  if (mode == MilConfidence::label_prob) {
    conf = confidence_scores(trace.probs, b.y);
  } else {
    conf.resize(b.x.rows);
    const Tensor2D m = row_max(trace.probs);
    for (std::size_t i = 0; i < b.x.rows; ++i) conf[i] = m.data[i];
  }
  const std::size_t k = mil_k(b.x.rows, mil_fraction);
  MilStepResult out;
  out.selected = mil_select(conf, k);

  Tensor2D sub_x(out.selected.size(), b.x.cols);
  std::vector<int> sub_y(out.selected.size());
  for (std::size_t r = 0; r < out.selected.size(); ++r) {
    const std::size_t src = out.selected[r];
    for (std::size_t c = 0; c < b.x.cols; ++c) sub_x.at(r, c) = b.x.at(src, c);
    sub_y[r] = b.y[src];
  }
  const StepResult step = detail::weighted_step(params, opt, sub_x, sub_y,
                                                std::vector<double>(sub_y.size(), 1.0));
  out.params = step.params;
  out.loss = step.loss;
  return out;
}

struct SwWsResult {
  ModelParams params;
  std::optional<double> strong_loss;
  double weak_loss = 0.0;
  std::vector<double> confidences;
};

// One full self-weighted iteration: optional strong step, weak forward with
// the updated parameters, per-example confidences, then one step on the
// confidence-weighted weak loss. Confidences are constants between updates;
// no gradient flows through them.
inline SwWsResult sw_ws_iteration(const ModelParams& params, Optimizer& strong_opt,
                                  Optimizer& weak_opt, const Batch* b_s, const Batch& b_w,
                                  bool use_strong, bool force_unit_confidence = false) {
  if (b_s != nullptr && !use_strong) {
    throw ConfigError("sw_ws_iteration: strong batch supplied but use_strong is false");
  }
  if (use_strong && b_s == nullptr) {
    throw ValueError("sw_ws_iteration: use_strong requires a strong batch");
  }
  if (b_w.source != Source::weak) throw ValueError("sw_ws_iteration: weak batch expected");

  SwWsResult out;
  ModelParams current = params;
  if (b_s != nullptr) {
    StepResult s = strong_step(current, strong_opt, *b_s);
    current = std::move(s.params);
    out.strong_loss = s.loss;
  }
  const ForwardTrace trace = forward(current, b_w.x);
  out.confidences = confidence_scores(trace.probs, b_w.y);
  std::vector<double> weights = out.confidences;
  if (force_unit_confidence) weights.assign(weights.size(), 1.0);
  CrossEntropyResult ce = cross_entropy(trace.probs, b_w.y, weights);
  const Gradients grads = backward(trace, current, ce.dlogits);
  out.params = weak_opt.step(current, grads);
  out.weak_loss = ce.loss;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

// What the early-stopping holdout monitors. Validation cross-entropy is the
// default; bag-level AUC is the noise-robust alternative for self-weighted
// runs, where confident disagreement with wrong weak labels inflates the
// unweighted CE long before ranking quality peaks.
enum class ValMetric { ce, auc };

struct StopPolicy {
  std::size_t max_epochs = 30;
  // allowed consecutive non-improving epochs before stopping; the best
  // checkpoint is restored either way
  std::size_t patience = 5;
  ValMetric metric = ValMetric::ce;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double strong_loss = 0.0;
  double weak_loss = 0.0;
  double val_loss = 0.0;
  double mean_confidence = 0.0;
};

// Instance-level training views. Images ride along only for image-substrate
// datasets; the projection re-derives features after augmentation.
struct TrainData {
  Tensor2D weak_x;
  std::vector<int> weak_y;
  std::vector<int> weak_bags;
  std::vector<Image> weak_images;

  Tensor2D strong_x;
  std::vector<int> strong_y;
  std::vector<Image> strong_images;

  Tensor2D val_x;
  std::vector<int> val_y;
  std::vector<int> val_bags;  // bag ids, for bag-level validation metrics

  Tensor2D projection;      // empty in feature mode
  AffineShift strong_shift{};

  bool has_images() const { return !strong_images.empty() || !weak_images.empty(); }
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  ModelConfig model;   // effective config (input dim and domain head resolved)
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
};

namespace detail {

constexpr std::uint64_t kInitTag = 0x1417;

inline Tensor2D gather_rows(const Tensor2D& x, const std::vector<std::size_t>& order,
                            std::size_t begin, std::size_t count) {
  Tensor2D out(count, x.cols);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t src = order[begin + r];
    for (std::size_t c = 0; c < x.cols; ++c) out.at(r, c) = x.at(src, c);
  }
  return out;
}

// Cycling sampler over a shuffled index sequence; reshuffles in place when
// the sequence is exhausted.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, Rng& rng) : rng_(rng), indices_(n) {
    std::iota(indices_.begin(), indices_.end(), std::size_t{0});
    rng_.shuffle(indices_);
  }

  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == indices_.size()) {
        rng_.shuffle(indices_);
        cursor_ = 0;
      }
      out.push_back(indices_[cursor_++]);
    }
    return out;
  }

 private:
  Rng& rng_;
  std::vector<std::size_t> indices_;
  std::size_t cursor_ = 0;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct PenaltyBundle {
  Tensor2D dfeatures;  // lambda-scaled gradient w.r.t. the combined feature rows
  Tensor2D d_head_weight;
  Tensor2D d_head_bias;
  double value = 0.0;
};

inline PenaltyBundle compute_penalty(const ShiftConfig& shift, const Tensor2D& features,
                                     std::size_t n_source, const ModelParams& params) {
  const std::size_t n_target = features.rows - n_source;
  Tensor2D f_s(n_source, features.cols);
  Tensor2D f_t(n_target, features.cols);
  for (std::size_t i = 0; i < n_source; ++i) {
    for (std::size_t c = 0; c < features.cols; ++c) f_s.at(i, c) = features.at(i, c);
  }
  for (std::size_t i = 0; i < n_target; ++i) {
    for (std::size_t c = 0; c < features.cols; ++c) f_t.at(i, c) = features.at(n_source + i, c);
  }

  PenaltyBundle out;
  out.dfeatures = Tensor2D(features.rows, features.cols);
  const double lambda = shift.penalty_weight;

  if (shift.mode == ShiftMode::mmd) {
    const double sigma = shift.kernel_sigma > 0.0 ? shift.kernel_sigma
                                                  : mmd_median_bandwidth(f_s, f_t);
    MmdResult r = mmd2(f_s, f_t, sigma);
    out.value = r.value;
    for (std::size_t i = 0; i < n_source; ++i) {
      for (std::size_t c = 0; c < features.cols; ++c) {
        out.dfeatures.at(i, c) = lambda * r.d_source.at(i, c);
      }
    }
    for (std::size_t i = 0; i < n_target; ++i) {
      for (std::size_t c = 0; c < features.cols; ++c) {
        out.dfeatures.at(n_source + i, c) = lambda * r.d_target.at(i, c);
      }
    }
  } else if (shift.mode == ShiftMode::coral) {
    CoralResult r = coral(f_s, f_t);
    out.value = r.value;
    for (std::size_t i = 0; i < n_source; ++i) {
      for (std::size_t c = 0; c < features.cols; ++c) {
        out.dfeatures.at(i, c) = lambda * r.d_source.at(i, c);
      }
    }
    for (std::size_t i = 0; i < n_target; ++i) {
      for (std::size_t c = 0; c < features.cols; ++c) {
        out.dfeatures.at(n_source + i, c) = lambda * r.d_target.at(i, c);
      }
    }
  } else if (shift.mode == ShiftMode::adversarial) {
    std::vector<int> domain(features.rows, 0);
    for (std::size_t i = n_source; i < features.rows; ++i) domain[i] = 1;
    AdversarialResult r = adversarial_penalty(features, domain, params.domain_weight,
                                              params.domain_bias, shift.grl_lambda);
    out.value = r.domain_loss;
    out.dfeatures = scale(r.d_features, lambda);
    out.d_head_weight = scale(r.d_head_weight, lambda);
    out.d_head_bias = scale(r.d_head_bias, lambda);
  }
  return out;
}

// Strong step with an attached domain penalty: one forward over the stacked
// [source; target] rows, class loss on the source rows only, penalty between
// the two feature blocks, single optimizer step.
inline StepResult strong_step_with_penalty(const ModelParams& params, Optimizer& opt,
                                           const Batch& b_s, const Tensor2D& target_x,
                                           const ShiftConfig& shift) {
  const std::size_t m = b_s.x.rows;
  Tensor2D x_cat(m + target_x.rows, b_s.x.cols);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < b_s.x.cols; ++c) x_cat.at(i, c) = b_s.x.at(i, c);
  }
  for (std::size_t i = 0; i < target_x.rows; ++i) {
    for (std::size_t c = 0; c < b_s.x.cols; ++c) x_cat.at(m + i, c) = target_x.at(i, c);
  }
  const ForwardTrace trace = forward(params, x_cat);

  Tensor2D probs_s(m, trace.probs.cols);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < trace.probs.cols; ++c) probs_s.at(i, c) = trace.probs.at(i, c);
  }
  CrossEntropyResult ce = cross_entropy(probs_s, b_s.y, std::vector<double>(m, 1.0));
  Tensor2D dlogits(trace.probs.rows, trace.probs.cols);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < trace.probs.cols; ++c) dlogits.at(i, c) = ce.dlogits.at(i, c);
  }

  PenaltyBundle penalty = compute_penalty(shift, trace.features, m, params);
  Gradients grads = backward(trace, params, dlogits, &penalty.dfeatures);
  if (shift.mode == ShiftMode::adversarial) {
    grads.domain_weight = penalty.d_head_weight;
    grads.domain_bias = penalty.d_head_bias;
  }
  return StepResult{opt.step(params, grads), ce.loss};
}

}  // namespace detail

// Full training run for one scheme/shift combination. Deterministic in
// (data, configs, seed); aborts with NumericError on non-finite losses.
inline TrainResult train_run(const TrainData& data, const ModelConfig& model_cfg,
                             const SchemeConfig& scheme, const ShiftConfig& shift,
                             const StopPolicy& stop, std::uint64_t seed) {
  scheme.validate();
  shift.validate();
  if (data.weak_x.rows == 0) throw ValueError("train_run: weak dataset is empty");
  if (scheme.use_strong && data.strong_x.rows == 0) {
    throw ValueError("train_run: use_strong requires strong instances");
  }
  if (scheme.use_strong && data.strong_x.cols != data.weak_x.cols) {
    throw DimensionError("train_run: strong/weak feature dims differ");
  }
  if (shift.has_penalty() && !scheme.use_strong) {
    throw ConfigError("shift.mode: feature penalties need strong (source) batches");
  }
  if (shift.wants_color_jitter() && shift.mode < ShiftMode::mmd && !data.has_images()) {
    throw ConfigError("shift.mode: image augmentations require an image-substrate dataset");
  }
  const bool augment = data.has_images() && shift.wants_color_jitter() && scheme.use_strong;
  if (data.val_x.rows == 0) throw ValueError("train_run: validation holdout is empty");

  ModelConfig cfg = model_cfg;
  cfg.input_dim = data.weak_x.cols;
  cfg.domain_head = shift.mode == ShiftMode::adversarial;
  cfg.validate();

  Rng rng(seed);
  Rng init_rng = rng.derive(detail::kInitTag);
  ModelParams params = init_params(cfg, init_rng);

  Optimizer opt_primary(scheme.optimizer, scheme.learning_rate);
  Optimizer opt_secondary(scheme.optimizer, scheme.learning_rate);
  const bool split_moments =
      scheme.optimizer == OptKind::adam && scheme.adam_moments == MomentMode::split;
  Optimizer& strong_opt = opt_primary;
  Optimizer& weak_opt = split_moments ? opt_secondary : opt_primary;

  const std::vector<double> val_ones(data.val_x.rows, 1.0);
  if (stop.metric == ValMetric::auc && data.val_bags.size() != data.val_x.rows) {
    throw ConfigError("train_run: AUC early stopping needs bag ids on the holdout");
  }
  // returns (validation CE, the monitored score)
  const auto evaluate_val = [&](const ModelParams& p) -> std::pair<double, double> {
    const ForwardTrace t = forward(p, data.val_x);
    const double ce = cross_entropy(t.probs, data.val_y, val_ones).loss;
    if (stop.metric == ValMetric::ce) return {ce, ce};
    const std::vector<int> preds = argmax_rows(t.probs);
    std::map<int, std::pair<std::size_t, std::size_t>> high_total;  // bag -> (high, total)
    std::map<int, int> bag_label;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      auto& [high, total] = high_total[data.val_bags[i]];
      if (preds[i] == kLabelHigh) ++high;
      ++total;
      bag_label[data.val_bags[i]] = data.val_y[i];
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& [bag, counts] : high_total) {
      scores.push_back(static_cast<double>(counts.first) / static_cast<double>(counts.second));
      labels.push_back(bag_label[bag]);
    }
    return {ce, roc_auc(scores, labels)};
  };
  const auto improved = [&](double score, double best) {
    return stop.metric == ValMetric::ce ? score < best : score > best;
  };

  TrainResult result;
  result.params = params;
  result.model = cfg;
  result.best_val_loss = evaluate_val(params).second;

  const std::size_t drive_count = scheme.use_weak ? data.weak_x.rows : data.strong_x.rows;
  const std::size_t drive_batch = scheme.use_weak ? scheme.weak_batch : scheme.strong_batch;

  detail::CyclingSampler strong_sampler(std::max<std::size_t>(1, data.strong_x.rows), rng);
  detail::CyclingSampler target_sampler(data.weak_x.rows, rng);

  const auto build_strong_batch = [&](const std::vector<std::size_t>& idx) {
    Batch b;
    b.source = Source::strong;
    b.y.resize(idx.size());
    b.bag_ids.assign(idx.size(), -1);
    b.x = Tensor2D(idx.size(), data.weak_x.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t s = idx[r];
      b.y[r] = data.strong_y[s];
      if (augment) {
        Image img = data.strong_images[s];
        if (shift.wants_stain_transfer() && !data.weak_images.empty()) {
          const Image& target = data.weak_images[rng.uniform_index(data.weak_images.size())];
          img = stain_transfer(img, target).image;
        }
        img = color_jitter(img, rng, shift.jitter_strength);
        const std::vector<double> f =
            detail::apply_shift(data.strong_shift, project_image(img, data.projection));
        for (std::size_t c = 0; c < f.size(); ++c) b.x.at(r, c) = f[c];
      } else {
        for (std::size_t c = 0; c < data.strong_x.cols; ++c) b.x.at(r, c) = data.strong_x.at(s, c);
      }
    }
    return b;
  };

  std::vector<std::size_t> drive_order(drive_count);
  std::iota(drive_order.begin(), drive_order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < stop.max_epochs; ++epoch) {
    rng.shuffle(drive_order);
    std::size_t n_batches = drive_count / drive_batch;
    std::size_t batch_size = drive_batch;
    if (n_batches == 0) {
      n_batches = 1;
      batch_size = drive_count;
    }

    std::vector<double> strong_losses, weak_losses, conf_means;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      // strong/source step
      if (scheme.use_strong) {
        std::vector<std::size_t> sidx;
        if (scheme.use_weak) {
          sidx = strong_sampler.take(std::min(scheme.strong_batch, data.strong_x.rows));
        } else {
          sidx.assign(drive_order.begin() + bi * batch_size,
                      drive_order.begin() + bi * batch_size + batch_size);
        }
        const Batch b_s = build_strong_batch(sidx);
        StepResult s;
        if (shift.has_penalty()) {
          const std::vector<std::size_t> tidx =
              target_sampler.take(std::min(scheme.weak_batch, data.weak_x.rows));
          const Tensor2D target_x =
              detail::gather_rows(data.weak_x, tidx, 0, tidx.size());
          s = detail::strong_step_with_penalty(params, strong_opt, b_s, target_x, shift);
        } else {
          s = strong_step(params, strong_opt, b_s);
        }
        params = std::move(s.params);
        strong_losses.push_back(s.loss);
      }

      // weak step (after the strong update, per the iteration contract)
      if (scheme.use_weak) {
        Batch b_w;
        b_w.source = Source::weak;
        b_w.x = detail::gather_rows(data.weak_x, drive_order, bi * batch_size, batch_size);
        b_w.y.resize(batch_size);
        b_w.bag_ids.resize(batch_size);
        for (std::size_t r = 0; r < batch_size; ++r) {
          const std::size_t src = drive_order[bi * batch_size + r];
          b_w.y[r] = data.weak_y[src];
          b_w.bag_ids[r] = data.weak_bags[src];
        }

        if (scheme.weak_mode == WeakMode::mil_ws) {
          const ForwardTrace probe = forward(params, b_w.x);
          conf_means.push_back(detail::mean_of(confidence_scores(probe.probs, b_w.y)));
          MilStepResult r =
              weak_step_mil(params, weak_opt, b_w, scheme.mil_fraction, scheme.mil_confidence);
          const std::size_t expect = mil_k(b_w.x.rows, scheme.mil_fraction);
          if (r.selected.size() != expect) {
            throw VerificationError("weak_step_mil: selected " +
                                    std::to_string(r.selected.size()) + " of expected " +
                                    std::to_string(expect));
          }
          params = std::move(r.params);
          weak_losses.push_back(r.loss);
        } else {
          const ForwardTrace trace = forward(params, b_w.x);
          const std::vector<double> conf = confidence_scores(trace.probs, b_w.y);
          conf_means.push_back(detail::mean_of(conf));
          std::vector<double> weights;
          if (scheme.weak_mode == WeakMode::sw_ws && !scheme.force_unit_confidence) {
            weights = conf;
          } else {
            weights.assign(conf.size(), 1.0);
          }
          CrossEntropyResult ce = cross_entropy(trace.probs, b_w.y, weights);
          const Gradients grads = backward(trace, params, ce.dlogits);
          params = weak_opt.step(params, grads);
          weak_losses.push_back(ce.loss);
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.strong_loss = detail::mean_of(strong_losses);
    rec.weak_loss = detail::mean_of(weak_losses);
    rec.mean_confidence = detail::mean_of(conf_means);
    const auto [val_ce, val_score] = evaluate_val(params);
    rec.val_loss = val_ce;
    if ((scheme.use_strong && !std::isfinite(rec.strong_loss)) ||
        (scheme.use_weak && !std::isfinite(rec.weak_loss)) || !std::isfinite(rec.val_loss)) {
      throw NumericError("train_run: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    result.epochs_run = epoch + 1;

    if (improved(val_score, result.best_val_loss)) {
      result.best_val_loss = val_score;
      result.best_epoch = epoch + 1;
      result.params = params;
    } else if (epoch + 1 - result.best_epoch >= stop.patience) {
      break;
    }
  }
  return result;
}

// History CSV: epoch, strong_loss, weak_loss, val_loss, mean_confidence.
inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path);
  if (!os) throw Error("write_history_csv: cannot open " + path);
  os << "epoch,strong_loss,weak_loss,val_loss,mean_confidence\n";
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << format_double(r.strong_loss) << ',' << format_double(r.weak_loss)
       << ',' << format_double(r.val_loss) << ',' << format_double(r.mean_confidence) << '\n';
  }
  if (!os) throw Error("write_history_csv: write failed for " + path);
}

}  // namespace weakstrong
