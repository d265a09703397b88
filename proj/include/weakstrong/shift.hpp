#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/image.hpp"
#include "weakstrong/model.hpp"
#include "weakstrong/rng.hpp"
#include "weakstrong/tensor.hpp"

namespace weakstrong {

// Covariate-shift reduction strategies. Enum order encodes the incremental
// ladder: stain transfer also jitters, and every feature-level penalty also
// applies both image augmentations when image data is available.
enum class ShiftMode { none, color_jitter, stain_transfer, mmd, coral, adversarial };

struct ShiftConfig {
  ShiftMode mode = ShiftMode::none;
  double penalty_weight = 1.0;  // lambda multiplying the DA penalty in the loss
  double kernel_sigma = 0.0;    // RBF bandwidth; 0 selects the median heuristic
  double grl_lambda = 1.0;      // gradient-reversal scale for the adversarial head
  double jitter_strength = 0.1;

  bool wants_color_jitter() const { return mode >= ShiftMode::color_jitter; }
  bool wants_stain_transfer() const { return mode >= ShiftMode::stain_transfer; }
  bool has_penalty() const { return mode >= ShiftMode::mmd; }

  void validate() const {
    if (penalty_weight < 0.0) throw ConfigError("shift.penalty_weight: must be >= 0");
    if (kernel_sigma < 0.0) throw ConfigError("shift.kernel_sigma: must be >= 0");
    if (jitter_strength < 0.0 || jitter_strength >= 1.0) {
      throw ConfigError("shift.jitter_strength: must be in [0, 1)");
    }
  }
};

// ---------------------------------------------------------------------------
// Color augmentation

// Per-channel affine perturbation c' = clamp(alpha_c * c + beta_c) with
// alpha_c ~ U[1-s, 1+s] and beta_c ~ U[-s*255/4, +s*255/4].
inline Image color_jitter(const Image& img, Rng& rng, double strength) {
  if (strength < 0.0 || strength >= 1.0) {
    throw ValueError("color_jitter: strength must be in [0, 1)");
  }
  std::array<double, 3> alpha, beta;
  for (std::size_t c = 0; c < 3; ++c) {
    alpha[c] = rng.uniform(1.0 - strength, 1.0 + strength);
    beta[c] = rng.uniform(-strength * 255.0 / 4.0, strength * 255.0 / 4.0);
  }
  Image out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = alpha[i % 3] * out.data[i] + beta[i % 3];
  }
  clamp_channels(out);
  return out;
}

// ---------------------------------------------------------------------------
// Stain statistics and transfer (Macenko-style eigendecomposition of the
// optical-density covariance; angle extremes at the 1st/99th percentiles)

struct StainStats {
  std::array<double, 3> od_mean{};
  std::array<double, 3> od_std{};
  // Unit-norm stain vectors in OD space; basis[0] is the hematoxylin-like
  // component (larger red-channel OD).
  std::array<std::array<double, 3>, 2> basis{};
  std::array<double, 2> conc_p1{};
  std::array<double, 2> conc_p99{};
  bool degenerate = false;  // rank-deficient OD covariance
};

namespace detail {

inline double od_of(double pixel) { return -std::log((pixel + 1.0) / 256.0); }
inline double pixel_of(double od) { return 256.0 * std::exp(-od) - 1.0; }

// Jacobi eigendecomposition of a symmetric 3x3 matrix. Returns eigenvalues
// in descending order with matching unit eigenvectors.
inline void symmetric_eig3(std::array<std::array<double, 3>, 3> a, std::array<double, 3>& evals,
                           std::array<std::array<double, 3>, 3>& evecs) {
  std::array<std::array<double, 3>, 3> v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-18) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-30) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x][x] > a[y][y]; });
  for (int i = 0; i < 3; ++i) {
    evals[i] = a[order[i]][order[i]];
    for (int k = 0; k < 3; ++k) evecs[i][k] = v[k][order[i]];
  }
}

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ValueError("percentile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace detail

inline StainStats estimate_stain_stats(const Image& img) {
  if (img.empty()) throw ValueError("estimate_stain_stats: empty image");
  const std::size_t n = img.pixel_count();
  std::vector<std::array<double, 3>> od(n);
  StainStats st;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      od[i][c] = detail::od_of(img.data[i * 3 + c]);
      st.od_mean[c] += od[i][c];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) st.od_mean[c] /= static_cast<double>(n);

  std::array<std::array<double, 3>, 3> cov{};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        cov[a][b] += (od[i][a] - st.od_mean[a]) * (od[i][b] - st.od_mean[b]);
      }
    }
  }
  for (auto& row : cov) {
    for (double& v : row) v /= static_cast<double>(n);
  }
  for (std::size_t c = 0; c < 3; ++c) st.od_std[c] = std::sqrt(std::max(0.0, cov[c][c]));

  std::array<double, 3> evals;
  std::array<std::array<double, 3>, 3> evecs;
  detail::symmetric_eig3(cov, evals, evecs);
  if (evals[1] <= std::max(evals[0] * 1e-9, 1e-12)) {
    st.degenerate = true;
    return st;
  }

  // Orient the leading plane vector along the mean OD so projection angles
  // stay within one branch of atan2.
  std::array<double, 3> e1 = evecs[0], e2 = evecs[1];
  double mean_proj = 0.0;
  for (std::size_t c = 0; c < 3; ++c) mean_proj += st.od_mean[c] * e1[c];
  if (mean_proj < 0.0) {
    for (double& v : e1) v = -v;
  }

  std::vector<double> phi(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p1 = 0.0, p2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      p1 += od[i][c] * e1[c];
      p2 += od[i][c] * e2[c];
    }
    phi[i] = std::atan2(p2, p1);
  }
  const double phi_lo = detail::percentile(phi, 0.01);
  const double phi_hi = detail::percentile(phi, 0.99);

  auto stain_vector = [&](double angle) {
    std::array<double, 3> v{};
    for (std::size_t c = 0; c < 3; ++c) v[c] = std::cos(angle) * e1[c] + std::sin(angle) * e2[c];
    double s = v[0] + v[1] + v[2];
    if (s < 0.0) {
      for (double& x : v) x = -x;
    }
    double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (double& x : v) x /= norm;
    return v;
  };
  std::array<double, 3> va = stain_vector(phi_lo);
  std::array<double, 3> vb = stain_vector(phi_hi);
  if (va[0] >= vb[0]) {
    st.basis[0] = va;
    st.basis[1] = vb;
  } else {
    st.basis[0] = vb;
    st.basis[1] = va;
  }

  // Least-squares concentrations per pixel: c = (B^T B)^-1 B^T od.
  const auto& b0 = st.basis[0];
  const auto& b1 = st.basis[1];
  const double m00 = b0[0] * b0[0] + b0[1] * b0[1] + b0[2] * b0[2];
  const double m01 = b0[0] * b1[0] + b0[1] * b1[1] + b0[2] * b1[2];
  const double m11 = b1[0] * b1[0] + b1[1] * b1[1] + b1[2] * b1[2];
  const double det = m00 * m11 - m01 * m01;
  if (std::abs(det) < 1e-12) {
    st.degenerate = true;
    return st;
  }
  std::vector<double> c0(n), c1(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r0 = od[i][0] * b0[0] + od[i][1] * b0[1] + od[i][2] * b0[2];
    const double r1 = od[i][0] * b1[0] + od[i][1] * b1[1] + od[i][2] * b1[2];
    c0[i] = (m11 * r0 - m01 * r1) / det;
    c1[i] = (m00 * r1 - m01 * r0) / det;
  }
  st.conc_p1 = {detail::percentile(c0, 0.01), detail::percentile(c1, 0.01)};
  st.conc_p99 = {detail::percentile(c0, 0.99), detail::percentile(c1, 0.99)};
  return st;
}

struct StainTransferResult {
  Image image;
  bool used_fallback = false;  // rank-deficient OD covariance path taken
};

// Re-expresses the source image in the target image's stain basis: source
// concentrations are rescaled to the target's 99th-percentile range and
// recomposed with the target basis. Degenerate (near rank-deficient) inputs
// fall back to per-channel OD mean/std matching.
inline StainTransferResult stain_transfer(const Image& src, const Image& target) {
  if (src.empty() || target.empty()) throw ValueError("stain_transfer: empty image");
  const StainStats ss = estimate_stain_stats(src);
  const StainStats ts = estimate_stain_stats(target);
  StainTransferResult out;
  out.image = Image(src.height, src.width);
  const std::size_t n = src.pixel_count();

  if (ss.degenerate || ts.degenerate) {
    out.used_fallback = true;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double od = detail::od_of(src.data[i * 3 + c]);
        double od_new;
        if (ss.od_std[c] < 1e-12) {
          od_new = od - ss.od_mean[c] + ts.od_mean[c];
        } else {
          od_new = (od - ss.od_mean[c]) / ss.od_std[c] * ts.od_std[c] + ts.od_mean[c];
        }
        out.image.data[i * 3 + c] = detail::pixel_of(od_new);
      }
    }
    clamp_channels(out.image);
    return out;
  }

  const auto& b0 = ss.basis[0];
  const auto& b1 = ss.basis[1];
  const double m00 = b0[0] * b0[0] + b0[1] * b0[1] + b0[2] * b0[2];
  const double m01 = b0[0] * b1[0] + b0[1] * b1[1] + b0[2] * b1[2];
  const double m11 = b1[0] * b1[0] + b1[1] * b1[1] + b1[2] * b1[2];
  const double det = m00 * m11 - m01 * m01;
  std::array<double, 2> sc;
  for (std::size_t j = 0; j < 2; ++j) {
    sc[j] = (std::abs(ss.conc_p99[j]) > 1e-9) ? ts.conc_p99[j] / ss.conc_p99[j] : 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 3> od;
    for (std::size_t c = 0; c < 3; ++c) od[c] = detail::od_of(src.data[i * 3 + c]);
    const double r0 = od[0] * b0[0] + od[1] * b0[1] + od[2] * b0[2];
    const double r1 = od[0] * b1[0] + od[1] * b1[1] + od[2] * b1[2];
    const double c0 = (m11 * r0 - m01 * r1) / det * sc[0];
    const double c1 = (m00 * r1 - m01 * r0) / det * sc[1];
    for (std::size_t c = 0; c < 3; ++c) {
      const double od_new = c0 * ts.basis[0][c] + c1 * ts.basis[1][c];
      out.image.data[i * 3 + c] = detail::pixel_of(od_new);
    }
  }
  clamp_channels(out.image);
  return out;
}

// ---------------------------------------------------------------------------
// Feature-level penalties. Each returns its value together with analytic
// gradients w.r.t. both feature batches.

struct MmdResult {
  double value = 0.0;
  Tensor2D d_source;
  Tensor2D d_target;
};

// Median of pooled pairwise Euclidean distances; bandwidth fallback is 1.
inline double mmd_median_bandwidth(const Tensor2D& f_s, const Tensor2D& f_t) {
  if (f_s.cols != f_t.cols) {
    throw DimensionError("mmd_median_bandwidth: feature dims differ, " + shape_str(f_s) +
                         " vs " + shape_str(f_t));
  }
  std::vector<const Tensor2D*> parts{&f_s, &f_t};
  std::vector<std::vector<double>> rows;
  for (const Tensor2D* p : parts) {
    for (std::size_t i = 0; i < p->rows; ++i) {
      rows.emplace_back(p->data.begin() + i * p->cols, p->data.begin() + (i + 1) * p->cols);
    }
  }
  std::vector<double> dists;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        const double d = rows[i][k] - rows[j][k];
        d2 += d * d;
      }
      dists.push_back(std::sqrt(d2));
    }
  }
  if (dists.empty()) return 1.0;
  const double med = detail::percentile(dists, 0.5);
  return med > 1e-12 ? med : 1.0;
}

// Biased V-statistic estimator of squared MMD with RBF kernel
// k(a,b) = exp(-||a-b||^2 / (2 sigma^2)): mean_ss + mean_tt - 2 mean_st.
// Identical inputs give exactly zero.
inline MmdResult mmd2(const Tensor2D& f_s, const Tensor2D& f_t, double sigma) {
  if (sigma <= 0.0) throw ValueError("mmd2: sigma must be > 0");
  if (f_s.cols != f_t.cols) {
    throw DimensionError("mmd2: feature dims differ, " + shape_str(f_s) + " vs " + shape_str(f_t));
  }
  if (f_s.rows == 0 || f_t.rows == 0) throw ValueError("mmd2: empty feature batch");
  const std::size_t m = f_s.rows, n = f_t.rows, d = f_s.cols;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  const double inv_sigma2 = 1.0 / (sigma * sigma);

  auto kernel = [&](const Tensor2D& a, std::size_t i, const Tensor2D& b, std::size_t j) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = a.at(i, k) - b.at(j, k);
      d2 += diff * diff;
    }
    return std::exp(-d2 * inv_two_sigma2);
  };

  MmdResult out;
  out.d_source = Tensor2D(m, d);
  out.d_target = Tensor2D(n, d);

  double mean_ss = 0.0, mean_tt = 0.0, mean_st = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double kv = kernel(f_s, i, f_s, j);
      mean_ss += kv;
      const double w = 2.0 / static_cast<double>(m * m) * kv * inv_sigma2;
      for (std::size_t k = 0; k < d; ++k) {
        out.d_source.at(i, k) += w * (f_s.at(j, k) - f_s.at(i, k));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double kv = kernel(f_t, i, f_t, j);
      mean_tt += kv;
      const double w = 2.0 / static_cast<double>(n * n) * kv * inv_sigma2;
      for (std::size_t k = 0; k < d; ++k) {
        out.d_target.at(i, k) += w * (f_t.at(j, k) - f_t.at(i, k));
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double kv = kernel(f_s, i, f_t, j);
      mean_st += kv;
      const double w = 2.0 / static_cast<double>(m * n) * kv * inv_sigma2;
      for (std::size_t k = 0; k < d; ++k) {
        out.d_source.at(i, k) -= w * (f_t.at(j, k) - f_s.at(i, k));
        out.d_target.at(j, k) -= w * (f_s.at(i, k) - f_t.at(j, k));
      }
    }
  }
  mean_ss /= static_cast<double>(m * m);
  mean_tt /= static_cast<double>(n * n);
  mean_st /= static_cast<double>(m * n);
  out.value = mean_ss + mean_tt - 2.0 * mean_st;
  ensure_finite(out.d_source, "mmd2");
  ensure_finite(out.d_target, "mmd2");
  return out;
}

struct CoralResult {
  double value = 0.0;
  Tensor2D d_source;
  Tensor2D d_target;
};

// ||C_s - C_t||_F^2 / (4 d^2) with sample covariances (n-1 denominator).
inline CoralResult coral(const Tensor2D& f_s, const Tensor2D& f_t) {
  if (f_s.cols != f_t.cols) {
    throw DimensionError("coral: feature dims differ, " + shape_str(f_s) + " vs " + shape_str(f_t));
  }
  if (f_s.rows < 2 || f_t.rows < 2) throw ValueError("coral: each batch needs >= 2 rows");
  const std::size_t d = f_s.cols;

  auto centered = [](const Tensor2D& x) {
    Tensor2D mean = col_mean(x);
    Tensor2D out = x;
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) -= mean.data[j];
    }
    return out;
  };
  const Tensor2D xs = centered(f_s);
  const Tensor2D xt = centered(f_t);
  const Tensor2D cs = scale(matmul(transpose(xs), xs), 1.0 / static_cast<double>(f_s.rows - 1));
  const Tensor2D ct = scale(matmul(transpose(xt), xt), 1.0 / static_cast<double>(f_t.rows - 1));
  const Tensor2D diff = sub(cs, ct);

  CoralResult out;
  const double denom = 4.0 * static_cast<double>(d) * static_cast<double>(d);
  for (double v : diff.data) out.value += v * v;
  out.value /= denom;

  // dL/dX = X_centered * (C_s - C_t) / ((n-1) d^2); centering of the result
  // is a no-op because X_centered has zero column means.
  const double gs = 1.0 / (static_cast<double>(f_s.rows - 1) * static_cast<double>(d * d));
  const double gt = -1.0 / (static_cast<double>(f_t.rows - 1) * static_cast<double>(d * d));
  out.d_source = scale(matmul(xs, diff), gs);
  out.d_target = scale(matmul(xt, diff), gt);
  return out;
}

struct AdversarialResult {
  double domain_loss = 0.0;
  Tensor2D d_features;     // already multiplied by -grl_lambda (gradient reversal)
  Tensor2D d_head_weight;  // ordinary gradients for the domain head
  Tensor2D d_head_bias;
};

// Two-class domain discrimination loss on top of the feature batch. The head
// receives ordinary gradients; the features receive the reversed gradient
// scaled by -grl_lambda.
inline AdversarialResult adversarial_penalty(const Tensor2D& features,
                                             const std::vector<int>& domain_labels,
                                             const Tensor2D& head_weight,
                                             const Tensor2D& head_bias, double grl_lambda) {
  if (features.rows != domain_labels.size()) {
    throw DimensionError("adversarial_penalty: " + std::to_string(domain_labels.size()) +
                         " labels for " + std::to_string(features.rows) + " feature rows");
  }
  for (int y : domain_labels) {
    if (y != 0 && y != 1) throw ValueError("adversarial_penalty: domain labels must be 0 or 1");
  }
  const Tensor2D logits = detail::affine(features, head_weight, head_bias);
  const Tensor2D probs = softmax_rows(logits);
  const std::vector<double> ones(features.rows, 1.0);
  CrossEntropyResult ce = cross_entropy(probs, domain_labels, ones);

  AdversarialResult out;
  out.domain_loss = ce.loss;
  out.d_head_weight = matmul(transpose(features), ce.dlogits);
  out.d_head_bias = Tensor2D(1, head_bias.cols);
  for (std::size_t j = 0; j < ce.dlogits.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < ce.dlogits.rows; ++i) s += ce.dlogits.at(i, j);
    out.d_head_bias.data[j] = s;
  }
  out.d_features = scale(matmul(ce.dlogits, transpose(head_weight)), -grl_lambda);
  return out;
}

}  // namespace weakstrong
