#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "weakstrong/cv.hpp"
#include "weakstrong/metrics.hpp"
#include "weakstrong/model.hpp"
#include "weakstrong/optim.hpp"
#include "weakstrong/schemes.hpp"
#include "weakstrong/shift.hpp"
#include "weakstrong/synthdata.hpp"
#include "weakstrong/tensor.hpp"
#include "weakstrong/util.hpp"

namespace weakstrong {

// Independent reference implementations. These deliberately avoid the main
// code paths (and their helpers) so each pairing forms a genuine dual route:
// plain loops here, rank/merge/vectorized algebra in the library.
namespace oracle {

inline Tensor2D matmul_triple_loop(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  }
  return out;
}

// Pair enumeration with half credit for ties.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Full O(n^2) concordant/discordant enumeration.
inline double tau_pairs(const std::vector<double>& scores, const std::vector<int>& groups,
                        TauVariant variant = TauVariant::b) {
  const std::size_t n = scores.size();
  std::uint64_t concordant = 0, discordant = 0, tie_x = 0, tie_y = 0, n0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ++n0;
      const bool sx = scores[i] == scores[j];
      const bool sy = groups[i] == groups[j];
      if (sx) ++tie_x;
      if (sy) ++tie_y;
      if (sx || sy) continue;
      const bool up_x = scores[i] < scores[j];
      const bool up_y = groups[i] < groups[j];
      if (up_x == up_y) ++concordant;
      else ++discordant;
    }
  }
  const double cd = static_cast<double>(concordant) - static_cast<double>(discordant);
  if (variant == TauVariant::a) return cd / static_cast<double>(n0);
  if (n0 == tie_x) return 0.0;
  return cd / std::sqrt(static_cast<double>(n0 - tie_x) * static_cast<double>(n0 - tie_y));
}

// Standalone scalar Adam loop (own variable names, no shared code).
inline std::vector<double> adam_scalar_trajectory(double theta, const std::vector<double>& grads,
                                                  double lr, double beta1 = 0.9,
                                                  double beta2 = 0.999, double eps = 1e-8) {
  std::vector<double> out;
  double m = 0.0, v = 0.0;
  for (std::size_t step = 1; step <= grads.size(); ++step) {
    const double g = grads[step - 1];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mc = m / (1.0 - std::pow(beta1, static_cast<double>(step)));
    const double vc = v / (1.0 - std::pow(beta2, static_cast<double>(step)));
    theta -= lr * mc / (std::sqrt(vc) + eps);
    out.push_back(theta);
  }
  return out;
}

// c_i literally as the indicator sum over classes.
inline double confidence_indicator_sum(const Tensor2D& probs, std::size_t row, int label) {
  double c = 0.0;
  for (std::size_t k = 0; k < probs.cols; ++k) {
    c += probs.at(row, k) * (static_cast<int>(k) == label ? 1.0 : 0.0);
  }
  return c;
}

// Top-k by full sort on (confidence desc, index asc); returns an ascending
// index set for comparison.
inline std::vector<std::size_t> top_k_full_sort(const std::vector<double>& conf, std::size_t k) {
  std::vector<std::size_t> idx(conf.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (conf[a] != conf[b]) return conf[a] > conf[b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct ScalarTrace {
  double w0, w1, b0, b1;
  double confidence;
  double strong_loss, weak_loss;
};

// Hand trace of one combined iteration (strong step, weak forward with the
// updated parameters, confidence, weighted weak step) for the minimal model:
// one scalar input, no hidden layers, two classes, plain SGD. Written as
// bare scalar arithmetic.
inline ScalarTrace sw_ws_scalar_trace(double w0, double w1, double b0, double b1, double x_s,
                                      int y_s, double x_w, int y_w, double eta) {
  auto softmax2 = [](double z0, double z1, double& p0, double& p1) {
    const double m = z0 > z1 ? z0 : z1;
    const double e0 = std::exp(z0 - m);
    const double e1 = std::exp(z1 - m);
    p0 = e0 / (e0 + e1);
    p1 = e1 / (e0 + e1);
  };

  // strong step
  double p0, p1;
  softmax2(x_s * w0 + b0, x_s * w1 + b1, p0, p1);
  const double strong_loss = -std::log(y_s == 0 ? p0 : p1);
  const double d0 = p0 - (y_s == 0 ? 1.0 : 0.0);
  const double d1 = p1 - (y_s == 1 ? 1.0 : 0.0);
  w0 -= eta * x_s * d0;
  w1 -= eta * x_s * d1;
  b0 -= eta * d0;
  b1 -= eta * d1;

  // weak forward with the updated parameters, confidence, weighted step
  softmax2(x_w * w0 + b0, x_w * w1 + b1, p0, p1);
  const double c = y_w == 0 ? p0 : p1;
  const double weak_loss = c * (-std::log(y_w == 0 ? p0 : p1));
  const double e0 = c * (p0 - (y_w == 0 ? 1.0 : 0.0));
  const double e1 = c * (p1 - (y_w == 1 ? 1.0 : 0.0));
  w0 -= eta * x_w * e0;
  w1 -= eta * x_w * e1;
  b0 -= eta * e0;
  b1 -= eta * e1;

  return ScalarTrace{w0, w1, b0, b1, c, strong_loss, weak_loss};
}

}  // namespace oracle

// ---------------------------------------------------------------------------
// Self-check suite behind `verify`

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline bool params_bit_equal(const ModelParams& a, const ModelParams& b) {
  bool equal = true;
  std::vector<const Tensor2D*> ta, tb;
  for_each_tensor(a, [&](const std::string&, const Tensor2D& t) { ta.push_back(&t); });
  for_each_tensor(b, [&](const std::string&, const Tensor2D& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!bit_equal(*ta[i], *tb[i])) equal = false;
  }
  return equal;
}

namespace detail {

inline CheckResult check_matmul_oracle() {
  CheckResult r{"matmul-oracle", true, ""};
  Rng rng(11);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rng.uniform_index(8);
    const std::size_t k = 1 + rng.uniform_index(8);
    const std::size_t n = 1 + rng.uniform_index(8);
    const Tensor2D a = rng_normal(rng, m, k, 0.0, 2.0);
    const Tensor2D b = rng_normal(rng, k, n, 0.0, 2.0);
    worst = std::max(worst, max_abs_diff(matmul(a, b), oracle::matmul_triple_loop(a, b)));
  }
  r.pass = worst <= 1e-12;
  r.detail = "max |impl - oracle| = " + format_double(worst);
  return r;
}

inline CheckResult check_gradcheck(int inject_bug_index) {
  CheckResult r{"gradcheck", true, ""};
  double worst = 0.0;
  std::string worst_name = "-";
  for (std::size_t layers : {1u, 2u, 3u}) {
    for (std::size_t classes : {2u, 5u}) {
      ModelConfig cfg;
      cfg.input_dim = 6;
      cfg.hidden_dims.assign(layers, 10);
      cfg.num_classes = classes;
      const GradCheckReport rep = grad_check_detail(cfg, 97 + layers * 10 + classes);
      if (rep.max_rel_error >= worst) {
        worst = rep.max_rel_error;
        worst_name = "hidden=" + std::to_string(layers) + ",K=" + std::to_string(classes) + ":" +
                     rep.worst_tensor;
      }
    }
  }
  if (inject_bug_index >= 0) {
    ModelConfig cfg;
    const GradCheckReport rep = grad_check_detail(cfg, 1234, inject_bug_index);
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      worst_name = "injected:" + rep.worst_tensor;
    }
  }
  r.pass = worst < 1e-5;
  r.detail = "max rel err = " + format_double(worst) + " at " + worst_name;
  return r;
}

inline CheckResult check_adam_reference() {
  CheckResult r{"adam-reference", true, ""};
  const std::vector<double> grads{0.5, -0.25, 0.8};
  const double lr = 1e-4;
  const std::vector<double> expected = oracle::adam_scalar_trajectory(1.0, grads, lr);

  ModelParams p;
  p.weights.push_back(Tensor2D(1, 1, std::vector<double>{1.0}));
  p.biases.push_back(Tensor2D(1, 1));
  AdamState state = init_adam(p, lr);
  double worst = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Gradients g = zeros_like(p);
    g.weights[0].data[0] = grads[i];
    auto [next, next_state] = adam_step(p, g, std::move(state));
    p = std::move(next);
    state = std::move(next_state);
    worst = std::max(worst, std::abs(p.weights[0].data[0] - expected[i]));
  }

  // first-step magnitude ~ lr for any gradient well above eps
  bool magnitude_ok = true;
  for (double g0 : {1e-3, 0.5, 7.0, 1e4}) {
    ModelParams q;
    q.weights.push_back(Tensor2D(1, 1, std::vector<double>{0.0}));
    q.biases.push_back(Tensor2D(1, 1));
    Gradients g = zeros_like(q);
    g.weights[0].data[0] = g0;
    auto [next, st] = adam_step(q, g, init_adam(q, lr));
    const double mag = std::abs(next.weights[0].data[0]);
    if (mag > lr * (1.0 + 1e-9) || mag < lr * (1.0 - 1e-4)) magnitude_ok = false;
  }
  r.pass = worst <= 1e-12 && magnitude_ok;
  r.detail = "trajectory max err = " + format_double(worst) +
             (magnitude_ok ? "" : ", first-step magnitude out of range");
  return r;
}

inline CheckResult check_metric_oracles() {
  CheckResult r{"metric-oracles", true, ""};
  Rng rng(23);
  bool exact = true;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 50;
    std::vector<double> scores(n);
    std::vector<int> labels(n), groups(n);
    const bool quantized = rep % 2 == 0;  // force ties on half the inputs
    for (std::size_t i = 0; i < n; ++i) {
      double s = rng.uniform();
      if (quantized) s = std::floor(s * 8.0) / 8.0;
      scores[i] = s;
      labels[i] = rng.uniform() < 0.5 ? 0 : 1;
      groups[i] = static_cast<int>(rng.uniform_index(5));
    }
    labels[0] = 0;
    labels[1] = 1;
    groups[0] = 0;
    groups[1] = 4;
    if (roc_auc(scores, labels) != oracle::auc_pairs(scores, labels)) exact = false;
    if (kendall_tau(scores, groups) != oracle::tau_pairs(scores, groups)) exact = false;
  }
  const double worked = roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  if (worked != 0.75) exact = false;
  r.pass = exact;
  r.detail = exact ? "200 random 50-item inputs exact; worked AUC = 0.75"
                   : "oracle disagreement";
  return r;
}

inline CheckResult check_mil_cardinality() {
  CheckResult r{"mil-cardinality", true, ""};
  Rng rng(31);
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {12};
  Rng init_rng = rng.derive(1);
  ModelParams params = init_params(cfg, init_rng);
  Optimizer opt(OptKind::adam, 1e-3);
  bool ok = true;
  for (int it = 0; it < 60 && ok; ++it) {
    Batch b;
    b.source = Source::weak;
    b.x = rng_normal(rng, 128, cfg.input_dim, 0.0, 1.0);
    b.y.resize(128);
    b.bag_ids.assign(128, 0);
    for (auto& y : b.y) y = static_cast<int>(rng.uniform_index(2));
    const ForwardTrace t = forward(params, b.x);
    const auto conf = confidence_scores(t.probs, b.y);
    MilStepResult step = weak_step_mil(params, opt, b, 0.25);
    if (step.selected.size() != 32) ok = false;
    if (step.selected != oracle::top_k_full_sort(conf, 32)) ok = false;
    params = step.params;
  }
  r.pass = ok;
  r.detail = ok ? "60 iterations, |selected| = 32 = sort-oracle top-32" : "selection mismatch";
  return r;
}

inline CheckResult check_confidence_indicator() {
  CheckResult r{"confidence-indicator", true, ""};
  Rng rng(41);
  Tensor2D logits = rng_normal(rng, 5, 4, 0.0, 2.0);
  const Tensor2D probs = softmax_rows(logits);
  std::vector<int> y(5);
  for (auto& v : y) v = static_cast<int>(rng.uniform_index(4));
  const auto c = confidence_scores(probs, y);
  bool exact = true;
  for (std::size_t i = 0; i < 5; ++i) {
    if (c[i] != oracle::confidence_indicator_sum(probs, i, y[i])) exact = false;
  }
  r.pass = exact;
  r.detail = exact ? "indicator-sum oracle exact on 5 rows" : "mismatch";
  return r;
}

inline CheckResult check_algorithm_trace() {
  CheckResult r{"algorithm-trace", true, ""};
  const double w0 = 0.3, w1 = -0.2, b0 = 0.05, b1 = -0.1;
  const double x_s = 1.3;
  const int y_s = 1;
  const double x_w = -0.7;
  const int y_w = 0;
  const double eta = 0.1;
  const oracle::ScalarTrace expect =
      oracle::sw_ws_scalar_trace(w0, w1, b0, b1, x_s, y_s, x_w, y_w, eta);

  ModelParams p;
  p.weights.push_back(Tensor2D(1, 2, std::vector<double>{w0, w1}));
  p.biases.push_back(Tensor2D(1, 2, std::vector<double>{b0, b1}));
  Optimizer opt(OptKind::sgd, eta);
  Batch b_s{Tensor2D(1, 1, std::vector<double>{x_s}), {y_s}, Source::strong, {-1}};
  Batch b_w{Tensor2D(1, 1, std::vector<double>{x_w}), {y_w}, Source::weak, {0}};
  const SwWsResult got = sw_ws_iteration(p, opt, opt, &b_s, b_w, true);

  double worst = 0.0;
  worst = std::max(worst, std::abs(got.params.weights[0].data[0] - expect.w0));
  worst = std::max(worst, std::abs(got.params.weights[0].data[1] - expect.w1));
  worst = std::max(worst, std::abs(got.params.biases[0].data[0] - expect.b0));
  worst = std::max(worst, std::abs(got.params.biases[0].data[1] - expect.b1));
  worst = std::max(worst, std::abs(got.confidences[0] - expect.confidence));
  r.pass = worst <= 1e-12;
  r.detail = "max |impl - trace| = " + format_double(worst);
  return r;
}

inline CheckResult check_scheme_reduction() {
  CheckResult r{"scheme-reduction", true, ""};
  GenConfig gen = default_gen_config();
  gen.n_bags = 12;
  gen.instances_per_bag = 8;
  gen.n_strong = 60;
  gen.seed = 7;
  const Dataset ds = generate_dataset(gen);

  std::vector<std::size_t> train_idx, holdout_idx;
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    (i < 10 ? train_idx : holdout_idx).push_back(i);
  }
  const TrainData data = build_train_data(ds.bags, train_idx, holdout_idx, ds.strong, gen);

  ModelConfig model;
  SchemeConfig plain;
  plain.weak_mode = WeakMode::plain;
  plain.weak_batch = 32;
  plain.strong_batch = 16;
  SchemeConfig swws = plain;
  swws.weak_mode = WeakMode::sw_ws;
  swws.force_unit_confidence = true;
  StopPolicy stop;
  stop.max_epochs = 4;
  stop.patience = 100;

  const TrainResult a = train_run(data, model, plain, ShiftConfig{}, stop, 99);
  const TrainResult b = train_run(data, model, swws, ShiftConfig{}, stop, 99);
  bool same = params_bit_equal(a.params, b.params) && a.history.size() == b.history.size();
  if (same) {
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      if (a.history[i].weak_loss != b.history[i].weak_loss ||
          a.history[i].strong_loss != b.history[i].strong_loss ||
          a.history[i].val_loss != b.history[i].val_loss ||
          a.history[i].mean_confidence != b.history[i].mean_confidence) {
        same = false;
      }
    }
  }
  r.pass = same;
  r.detail = same ? "SW-WS with c==1 is bitwise identical to the plain run" : "divergence";
  return r;
}

inline CheckResult check_penalties() {
  CheckResult r{"mmd-coral-penalties", true, ""};
  Rng rng(53);
  const Tensor2D same = rng_normal(rng, 6, 3, 0.0, 1.0);
  const double mmd_same = mmd2(same, same, 1.3).value;
  const double coral_same = coral(same, same).value;

  double worst_fd = 0.0;
  for (int rep = 0; rep < 4; ++rep) {
    Tensor2D f_s = rng_normal(rng, 6, 3, 0.0, 1.0);
    Tensor2D f_t = rng_normal(rng, 5, 3, 0.5, 1.2);
    const double sigma = 1.1;
    const MmdResult m = mmd2(f_s, f_t, sigma);
    const CoralResult c = coral(f_s, f_t);
    const double h = 1e-4;
    auto fd_check = [&](Tensor2D& x, auto&& value_fn, const Tensor2D& analytic) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + h;
        const double vp = value_fn();
        x.data[i] = saved - h;
        const double vm = value_fn();
        x.data[i] = saved;
        const double numeric = (vp - vm) / (2.0 * h);
        const double rel = std::abs(numeric - analytic.data[i]) /
                           std::max(1e-12, std::abs(numeric) + std::abs(analytic.data[i]));
        worst_fd = std::max(worst_fd, rel);
      }
    };
    fd_check(f_s, [&] { return mmd2(f_s, f_t, sigma).value; }, m.d_source);
    fd_check(f_t, [&] { return mmd2(f_s, f_t, sigma).value; }, m.d_target);
    fd_check(f_s, [&] { return coral(f_s, f_t).value; }, c.d_source);
    fd_check(f_t, [&] { return coral(f_s, f_t).value; }, c.d_target);
  }
  r.pass = std::abs(mmd_same) <= 1e-12 && std::abs(coral_same) <= 1e-12 && worst_fd < 1e-5;
  r.detail = "identical-input mmd = " + format_double(mmd_same) +
             ", coral = " + format_double(coral_same) +
             ", fd max rel err = " + format_double(worst_fd);
  return r;
}

inline CheckResult check_grl() {
  CheckResult r{"gradient-reversal", true, ""};
  Rng rng(61);
  const Tensor2D features = rng_normal(rng, 8, 4, 0.0, 1.0);
  const Tensor2D head_w = rng_normal(rng, 4, 2, 0.0, 0.5);
  const Tensor2D head_b(1, 2);
  std::vector<int> domain{0, 0, 0, 0, 1, 1, 1, 1};
  const AdversarialResult plain = adversarial_penalty(features, domain, head_w, head_b, -1.0);
  const AdversarialResult reversed = adversarial_penalty(features, domain, head_w, head_b, 0.7);
  const AdversarialResult zero = adversarial_penalty(features, domain, head_w, head_b, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < plain.d_features.size(); ++i) {
    worst = std::max(worst,
                     std::abs(reversed.d_features.data[i] + 0.7 * plain.d_features.data[i]));
    worst = std::max(worst, std::abs(zero.d_features.data[i]));
  }
  r.pass = worst <= 1e-15;
  r.detail = "reversal contract max err = " + format_double(worst);
  return r;
}

inline CheckResult check_stain_self_transfer() {
  CheckResult r{"stain-self-transfer", true, ""};
  Rng rng(71);
  StainParams stain;
  Image patch = render_synthetic_patch(rng, 0.6, stain, 16);
  quantize(patch);
  const StainTransferResult res = stain_transfer(patch, patch);
  double worst = 0.0;
  for (std::size_t i = 0; i < patch.data.size(); ++i) {
    worst = std::max(worst, std::abs(res.image.data[i] - patch.data[i]));
  }
  r.pass = worst <= 1.0 && !res.used_fallback;
  r.detail = "max channel deviation = " + format_double(worst);
  return r;
}

inline CheckResult check_blue_ratio() {
  CheckResult r{"blue-ratio-values", true, ""};
  Image px(1, 1);
  auto br_of = [&](double red, double green, double blue) {
    px.data = {red, green, blue};
    return blue_ratio(px).data[0];
  };
  const double black = br_of(0, 0, 0);
  const double blue = br_of(0, 0, 255);
  const double white = br_of(255, 255, 255);
  const double expected_white = (25500.0 / 511.0) * (256.0 / 766.0);
  r.pass = black == 0.0 && blue == 25500.0 && std::abs(white - expected_white) <= 1e-9 &&
           std::abs(white - 16.67) <= 0.01;
  r.detail = "black = " + format_double(black) + ", blue = " + format_double(blue) +
             ", white = " + format_double(white);
  return r;
}

}  // namespace detail

// Full invariant/oracle suite behind `verify`. inject_grad_bug >= 0 perturbs
// one analytic gradient tensor to prove the gradient check can fail and name
// the layer.
inline std::vector<CheckResult> run_verification(int inject_grad_bug = -1) {
  std::vector<CheckResult> results;
  results.push_back(detail::check_matmul_oracle());
  results.push_back(detail::check_gradcheck(inject_grad_bug));
  results.push_back(detail::check_adam_reference());
  results.push_back(detail::check_metric_oracles());
  results.push_back(detail::check_mil_cardinality());
  results.push_back(detail::check_confidence_indicator());
  results.push_back(detail::check_algorithm_trace());
  results.push_back(detail::check_scheme_reduction());
  results.push_back(detail::check_penalties());
  results.push_back(detail::check_grl());
  results.push_back(detail::check_stain_self_transfer());
  results.push_back(detail::check_blue_ratio());
  return results;
}

}  // namespace weakstrong
