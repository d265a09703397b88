#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/rng.hpp"
#include "weakstrong/tensor.hpp"

namespace weakstrong {

// Feed-forward classifier: ReLU hidden stack, affine class head, row-wise
// stable softmax. An optional single affine domain head (2 classes) hangs off
// the last hidden activation for adversarial domain adaptation.
struct ModelConfig {
  std::size_t input_dim = 8;
  std::vector<std::size_t> hidden_dims{32, 16};
  std::size_t num_classes = 2;
  bool domain_head = false;

  std::size_t feature_dim() const {
    return hidden_dims.empty() ? input_dim : hidden_dims.back();
  }

  void validate() const {
    if (input_dim < 1) throw ConfigError("model.input_dim: must be >= 1");
    for (std::size_t d : hidden_dims) {
      if (d < 1) throw ConfigError("model.hidden_dims: every entry must be >= 1");
    }
    if (num_classes < 2) throw ConfigError("model.num_classes: must be >= 2");
  }
};

struct ModelParams {
  // weights[l]: (dims[l], dims[l+1]); biases[l]: (1, dims[l+1]).
  // The last layer is the class head.
  std::vector<Tensor2D> weights;
  std::vector<Tensor2D> biases;
  bool has_domain_head = false;
  Tensor2D domain_weight;  // (feature_dim, 2)
  Tensor2D domain_bias;    // (1, 2)
};

// Same shape-structure as ModelParams.
struct Gradients {
  std::vector<Tensor2D> weights;
  std::vector<Tensor2D> biases;
  bool has_domain_head = false;
  Tensor2D domain_weight;
  Tensor2D domain_bias;
};

// Visits every parameter tensor with a stable name. The visit order defines
// the flat layout shared by checkpoints, optimizer state and gradcheck
// reports. Works for ModelParams and Gradients alike (same field names).
template <typename ParamsLike, typename Fn>
void for_each_tensor(ParamsLike& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    fn("layer" + std::to_string(l) + ".weight", p.weights[l]);
    fn("layer" + std::to_string(l) + ".bias", p.biases[l]);
  }
  if (p.has_domain_head) {
    fn(std::string("domain.weight"), p.domain_weight);
    fn(std::string("domain.bias"), p.domain_bias);
  }
}

inline Gradients zeros_like(const ModelParams& p) {
  Gradients g;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].rows, p.biases[l].cols);
  }
  g.has_domain_head = p.has_domain_head;
  if (p.has_domain_head) {
    g.domain_weight = Tensor2D(p.domain_weight.rows, p.domain_weight.cols);
    g.domain_bias = Tensor2D(p.domain_bias.rows, p.domain_bias.cols);
  }
  return g;
}

// He initialization: zero-mean normal with std sqrt(2 / fan_in), zero biases.
inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<std::size_t> dims;
  dims.push_back(cfg.input_dim);
  for (std::size_t d : cfg.hidden_dims) dims.push_back(d);
  dims.push_back(cfg.num_classes);

  ModelParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(dims[l]));
    p.weights.push_back(rng_normal(rng, dims[l], dims[l + 1], 0.0, std_dev));
    p.biases.emplace_back(1, dims[l + 1]);
  }
  p.has_domain_head = cfg.domain_head;
  if (cfg.domain_head) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(cfg.feature_dim()));
    p.domain_weight = rng_normal(rng, cfg.feature_dim(), 2, 0.0, std_dev);
    p.domain_bias = Tensor2D(1, 2);
  }
  return p;
}

struct ForwardTrace {
  std::vector<Tensor2D> activations;  // activations[0] = input, then post-ReLU hiddens
  std::vector<Tensor2D> pre_acts;     // pre-activation per hidden layer
  Tensor2D features;                  // last hidden activation (input if no hidden layer)
  Tensor2D logits;
  Tensor2D probs;                     // rows sum to 1, entries strictly inside (0, 1)
};

namespace detail {

// z = x * W + b (bias row added to every row)
inline Tensor2D affine(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b) {
  Tensor2D z = matmul(x, w);
  if (b.rows != 1 || b.cols != z.cols) {
    throw DimensionError("affine: bias shape " + shape_str(b) + " does not match " +
                         shape_str(z));
  }
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (std::size_t j = 0; j < z.cols; ++j) z.at(i, j) += b.data[j];
  }
  return z;
}

constexpr double kProbFloor = 1e-12;

}  // namespace detail

// Row-wise softmax with max-shift; rows are clamped strictly inside (0, 1)
// and renormalized so extreme logits cannot produce hard 0/1 probabilities.
inline Tensor2D softmax_rows(const Tensor2D& logits) {
  Tensor2D probs(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < logits.cols; ++j) m = std::max(m, logits.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double e = std::exp(logits.at(i, j) - m);
      probs.at(i, j) = e;
      sum += e;
    }
    double clamped_sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      double p = probs.at(i, j) / sum;
      p = std::min(std::max(p, detail::kProbFloor), 1.0 - detail::kProbFloor);
      probs.at(i, j) = p;
      clamped_sum += p;
    }
    for (std::size_t j = 0; j < logits.cols; ++j) probs.at(i, j) /= clamped_sum;
  }
  ensure_finite(probs, "softmax_rows");
  return probs;
}

inline ForwardTrace forward(const ModelParams& params, const Tensor2D& x) {
  if (params.weights.empty()) throw DimensionError("forward: empty model");
  if (x.cols != params.weights.front().rows) {
    throw DimensionError("forward: input " + shape_str(x) + " does not match first layer " +
                         shape_str(params.weights.front()));
  }
  ForwardTrace t;
  t.activations.push_back(x);
  const std::size_t hidden_layers = params.weights.size() - 1;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    Tensor2D z = detail::affine(t.activations.back(), params.weights[l], params.biases[l]);
    t.pre_acts.push_back(z);
    for (double& v : z.data) v = v > 0.0 ? v : 0.0;  // ReLU
    t.activations.push_back(std::move(z));
  }
  t.features = t.activations.back();
  t.logits = detail::affine(t.features, params.weights.back(), params.biases.back());
  t.probs = softmax_rows(t.logits);
  return t;
}

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor2D dlogits;  // (batch, K), already scaled by weight_i / batch
};

// Weighted categorical cross-entropy over softmax probabilities:
//   loss = (1/B) * sum_i w_i * (-log probs[i][y_i])
// The returned dlogits fold the same w_i / B scaling into each row, so a
// subsequent backward() yields the gradient of this exact loss.
inline CrossEntropyResult cross_entropy(const Tensor2D& probs, const std::vector<int>& labels,
                                        const std::vector<double>& weights) {
  const std::size_t batch = probs.rows;
  const std::size_t k = probs.cols;
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  if (weights.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(batch) + " rows");
  }
  CrossEntropyResult out;
  out.dlogits = Tensor2D(batch, k);
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValueError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(k) + ")");
    }
    const double w = weights[i];
    if (w < 0.0 || w > 1.0) {
      throw ValueError("cross_entropy: weight " + std::to_string(w) + " outside [0, 1]");
    }
    out.loss += w * (-std::log(probs.at(i, static_cast<std::size_t>(y)))) * inv_b;
    const double scale = w * inv_b;
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = (static_cast<std::size_t>(y) == j) ? 1.0 : 0.0;
      out.dlogits.at(i, j) = scale * (probs.at(i, j) - onehot);
    }
  }
  if (!std::isfinite(out.loss)) throw NumericError("cross_entropy: non-finite loss");
  return out;
}

// Reverse-mode gradients of the loss encoded in dlogits. dfeatures_extra,
// when non-null, is an additional gradient flowing into the last hidden
// activation (domain-adaptation penalties attach here).
inline Gradients backward(const ForwardTrace& trace, const ModelParams& params,
                          const Tensor2D& dlogits, const Tensor2D* dfeatures_extra = nullptr) {
  if (trace.activations.size() != params.weights.size()) {
    throw DimensionError("backward: trace does not match model depth");
  }
  if (dlogits.rows != trace.probs.rows || dlogits.cols != trace.probs.cols) {
    throw DimensionError("backward: dlogits " + shape_str(dlogits) + " vs probs " +
                         shape_str(trace.probs));
  }
  Gradients g = zeros_like(params);
  const std::size_t head = params.weights.size() - 1;

  Tensor2D delta = dlogits;
  g.weights[head] = matmul(transpose(trace.activations[head]), delta);
  for (std::size_t j = 0; j < delta.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < delta.rows; ++i) s += delta.at(i, j);
    g.biases[head].data[j] = s;
  }

  Tensor2D dact = matmul(delta, transpose(params.weights[head]));
  if (dfeatures_extra != nullptr) dact = add(dact, *dfeatures_extra);

  for (std::size_t l = head; l-- > 0;) {
    // through ReLU: gradient passes only where the pre-activation was positive
    Tensor2D dz = dact;
    const Tensor2D& z = trace.pre_acts[l];
    for (std::size_t i = 0; i < dz.size(); ++i) {
      if (z.data[i] <= 0.0) dz.data[i] = 0.0;
    }
    g.weights[l] = matmul(transpose(trace.activations[l]), dz);
    for (std::size_t j = 0; j < dz.cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < dz.rows; ++i) s += dz.at(i, j);
      g.biases[l].data[j] = s;
    }
    if (l > 0) dact = matmul(dz, transpose(params.weights[l]));
  }
  return g;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<std::pair<std::string, double>> per_tensor;  // (name, max rel error)
};

// Compares backward() against central finite differences parameter by
// parameter on a random model and batch. inject_bug_index, when >= 0,
// perturbs the analytic gradient of that tensor (test hook for making sure
// the check itself can fail and name the offending layer).
inline GradCheckReport grad_check_detail(const ModelConfig& cfg, std::uint64_t seed,
                                         int inject_bug_index = -1, double fd_step = 1e-4) {
  Rng rng(seed);
  ModelParams params = init_params(cfg, rng);
  const std::size_t batch = 5;
  Tensor2D x = rng_normal(rng, batch, cfg.input_dim, 0.0, 1.0);
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(rng.uniform_index(cfg.num_classes));
  const std::vector<double> weights(batch, 1.0);

  const auto loss_at = [&](const ModelParams& p) {
    const ForwardTrace t = forward(p, x);
    return cross_entropy(t.probs, labels, weights).loss;
  };

  const ForwardTrace trace = forward(params, x);
  Gradients analytic = backward(trace, params, cross_entropy(trace.probs, labels, weights).dlogits);

  int tensor_index = 0;
  for_each_tensor(analytic, [&](const std::string&, Tensor2D& t) {
    if (tensor_index == inject_bug_index) {
      for (double& v : t.data) v = v * 1.5 + 0.05;
    }
    ++tensor_index;
  });

  GradCheckReport report;
  std::vector<Tensor2D*> param_tensors;
  for_each_tensor(params, [&](const std::string&, Tensor2D& t) { param_tensors.push_back(&t); });
  std::vector<std::pair<std::string, Tensor2D*>> grad_tensors;
  for_each_tensor(analytic, [&](const std::string& name, Tensor2D& t) {
    grad_tensors.emplace_back(name, &t);
  });

  for (std::size_t ti = 0; ti < param_tensors.size(); ++ti) {
    Tensor2D& pt = *param_tensors[ti];
    const Tensor2D& gt = *grad_tensors[ti].second;
    double worst = 0.0;
    for (std::size_t i = 0; i < pt.size(); ++i) {
      const double saved = pt.data[i];
      pt.data[i] = saved + fd_step;
      const double lp = loss_at(params);
      pt.data[i] = saved - fd_step;
      const double lm = loss_at(params);
      pt.data[i] = saved;
      const double numeric = (lp - lm) / (2.0 * fd_step);
      const double analytic_v = gt.data[i];
      const double rel = std::abs(analytic_v - numeric) /
                         std::max(1e-12, std::abs(analytic_v) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
    report.per_tensor.emplace_back(grad_tensors[ti].first, worst);
    if (worst >= report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_tensor = grad_tensors[ti].first;
    }
  }
  return report;
}

inline double grad_check(const ModelConfig& cfg, std::uint64_t seed) {
  return grad_check_detail(cfg, seed).max_rel_error;
}

// ---------------------------------------------------------------------------
// Checkpoint file: little-endian binary dump of config + parameter tensors.
// Round-trips bit-exactly.

namespace detail {

constexpr char kCkptMagic[8] = {'W', 'S', 'C', 'K', 'P', 'T', '0', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw Error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

inline void write_tensor(std::ostream& os, const Tensor2D& t) {
  write_u64(os, t.rows);
  write_u64(os, t.cols);
  for (double v : t.data) write_f64(os, v);
}

inline Tensor2D read_tensor(std::istream& is) {
  const std::uint64_t rows = read_u64(is);
  const std::uint64_t cols = read_u64(is);
  Tensor2D t(rows, cols);
  for (double& v : t.data) v = read_f64(is);
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open " + path + " for writing");
  os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_u64(os, cfg.input_dim);
  detail::write_u64(os, cfg.hidden_dims.size());
  for (std::size_t d : cfg.hidden_dims) detail::write_u64(os, d);
  detail::write_u64(os, cfg.num_classes);
  detail::write_u64(os, cfg.domain_head ? 1 : 0);
  std::uint64_t count = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor2D&) { ++count; });
  detail::write_u64(os, count);
  for_each_tensor(params, [&](const std::string&, const Tensor2D& t) {
    detail::write_tensor(os, t);
  });
  if (!os) throw Error("checkpoint: write failed for " + path);
}

inline std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path);
  char magic[sizeof(detail::kCkptMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0) {
    throw Error("checkpoint: bad magic in " + path);
  }
  ModelConfig cfg;
  cfg.input_dim = detail::read_u64(is);
  cfg.hidden_dims.resize(detail::read_u64(is));
  for (auto& d : cfg.hidden_dims) d = detail::read_u64(is);
  cfg.num_classes = detail::read_u64(is);
  cfg.domain_head = detail::read_u64(is) != 0;

  ModelParams params;
  const std::uint64_t count = detail::read_u64(is);
  const std::size_t layer_count = cfg.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < layer_count; ++l) {
    params.weights.push_back(detail::read_tensor(is));
    params.biases.push_back(detail::read_tensor(is));
  }
  params.has_domain_head = cfg.domain_head;
  if (cfg.domain_head) {
    params.domain_weight = detail::read_tensor(is);
    params.domain_bias = detail::read_tensor(is);
  }
  const std::uint64_t expected = 2 * layer_count + (cfg.domain_head ? 2 : 0);
  if (count != expected) throw Error("checkpoint: tensor count mismatch in " + path);
  return {cfg, params};
}

}  // namespace weakstrong
