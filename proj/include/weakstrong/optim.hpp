#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/model.hpp"

namespace weakstrong {

namespace detail {

template <typename A, typename B>
void require_congruent(const A& a, const B& b, const char* op) {
  std::vector<const Tensor2D*> ta, tb;
  for_each_tensor(a, [&](const std::string&, const Tensor2D& t) { ta.push_back(&t); });
  for_each_tensor(b, [&](const std::string&, const Tensor2D& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) {
    throw DimensionError(std::string(op) + ": parameter structures differ");
  }
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!ta[i]->same_shape(*tb[i])) {
      throw DimensionError(std::string(op) + ": tensor shape mismatch " + shape_str(*ta[i]) +
                           " vs " + shape_str(*tb[i]));
    }
  }
}

}  // namespace detail

// theta' = theta - eta * g, elementwise.
inline ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double eta) {
  detail::require_congruent(params, grads, "sgd_step");
  ModelParams out = params;
  std::vector<Tensor2D*> pt;
  std::vector<const Tensor2D*> gt;
  for_each_tensor(out, [&](const std::string&, Tensor2D& t) { pt.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, const Tensor2D& t) { gt.push_back(&t); });
  for (std::size_t i = 0; i < pt.size(); ++i) {
    for (std::size_t j = 0; j < pt[i]->size(); ++j) pt[i]->data[j] -= eta * gt[i]->data[j];
    ensure_finite(*pt[i], "sgd_step");
  }
  return out;
}

struct AdamState {
  Gradients m;  // first moment, shape-congruent with the parameters
  Gradients v;  // second moment, entries >= 0
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 1e-4;
};

inline AdamState init_adam(const ModelParams& params, double learning_rate) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  s.learning_rate = learning_rate;
  return s;
}

// Bias-corrected Adam: t+1, moment update, theta' = theta - eta * m^ / (sqrt(v^) + eps).
inline std::pair<ModelParams, AdamState> adam_step(const ModelParams& params,
                                                   const Gradients& grads, AdamState state) {
  detail::require_congruent(params, grads, "adam_step");
  detail::require_congruent(params, state.m, "adam_step");
  ModelParams out = params;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  std::vector<Tensor2D*> pt, mt, vt;
  std::vector<const Tensor2D*> gt;
  for_each_tensor(out, [&](const std::string&, Tensor2D& t) { pt.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, const Tensor2D& t) { gt.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Tensor2D& t) { mt.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Tensor2D& t) { vt.push_back(&t); });

  for (std::size_t i = 0; i < pt.size(); ++i) {
    for (std::size_t j = 0; j < pt[i]->size(); ++j) {
      const double g = gt[i]->data[j];
      double& m = mt[i]->data[j];
      double& v = vt[i]->data[j];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      pt[i]->data[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    ensure_finite(*pt[i], "adam_step");
  }
  return {std::move(out), std::move(state)};
}

enum class OptKind { sgd, adam };

// Single-owner update-rule wrapper used by the training loop. One instance
// per parameter stream; never shared across runs or folds.
class Optimizer {
 public:
  Optimizer(OptKind kind, double learning_rate) : kind_(kind), learning_rate_(learning_rate) {}

  ModelParams step(const ModelParams& params, const Gradients& grads) {
    if (kind_ == OptKind::sgd) return sgd_step(params, grads, learning_rate_);
    if (!attached_) {
      state_ = init_adam(params, learning_rate_);
      attached_ = true;
    }
    auto [next, state] = adam_step(params, grads, std::move(state_));
    state_ = std::move(state);
    return next;
  }

  OptKind kind() const { return kind_; }
  std::uint64_t steps_taken() const { return kind_ == OptKind::adam ? state_.t : 0; }

 private:
  OptKind kind_;
  double learning_rate_;
  bool attached_ = false;
  AdamState state_;
};

}  // namespace weakstrong
