#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "weakstrong/error.hpp"
#include "weakstrong/rng.hpp"

namespace weakstrong {

// Dense row-major 2-D array of doubles. No broadcasting: call sites expand
// explicitly so shape mistakes surface as loud dimension errors. Every
// operation below is pure (inputs untouched, result freshly allocated) and
// guarantees a finite result or throws NumericError.
struct Tensor2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // length rows * cols

  Tensor2D() = default;

  Tensor2D(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  Tensor2D(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
      throw DimensionError("Tensor2D: data length " + std::to_string(data.size()) +
                           " does not match " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    }
  }

  static Tensor2D identity(std::size_t n) {
    Tensor2D t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }
};

inline std::string shape_str(const Tensor2D& t) {
  return "(" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + ")";
}

inline void ensure_finite(const Tensor2D& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite entry in result");
    }
  }
}

inline void require_same_shape(const Tensor2D& a, const Tensor2D& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a) +
                         " x " + shape_str(b));
  }
  Tensor2D out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

inline Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "add");
  Tensor2D out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  ensure_finite(out, "add");
  return out;
}

inline Tensor2D sub(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "sub");
  Tensor2D out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  ensure_finite(out, "sub");
  return out;
}

// elementwise (Hadamard) product
inline Tensor2D mul(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "mul");
  Tensor2D out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  ensure_finite(out, "mul");
  return out;
}

inline Tensor2D scale(const Tensor2D& a, double s) {
  Tensor2D out = a;
  for (double& v : out.data) v *= s;
  ensure_finite(out, "scale");
  return out;
}

inline Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out.data[j * a.rows + i] = a.data[i * a.cols + j];
  }
  return out;
}

// column vector of per-row sums, shape (rows, 1)
inline Tensor2D row_sum(const Tensor2D& a) {
  Tensor2D out(a.rows, 1);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += a.at(i, j);
    out.data[i] = s;
  }
  ensure_finite(out, "row_sum");
  return out;
}

// row vector of per-column means, shape (1, cols)
inline Tensor2D col_mean(const Tensor2D& a) {
  if (a.rows == 0) throw DimensionError("col_mean: empty tensor");
  Tensor2D out(1, a.cols);
  for (std::size_t j = 0; j < a.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += a.at(i, j);
    out.data[j] = s / static_cast<double>(a.rows);
  }
  ensure_finite(out, "col_mean");
  return out;
}

// column vector of per-row maxima, shape (rows, 1)
inline Tensor2D row_max(const Tensor2D& a) {
  if (a.cols == 0) throw DimensionError("row_max: zero-column tensor");
  Tensor2D out(a.rows, 1);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double m = a.at(i, 0);
    for (std::size_t j = 1; j < a.cols; ++j) m = std::max(m, a.at(i, j));
    out.data[i] = m;
  }
  return out;
}

// elementwise exp; overflow is reported, not propagated
inline Tensor2D exp_elem(const Tensor2D& a) {
  Tensor2D out = a;
  for (double& v : out.data) v = std::exp(v);
  ensure_finite(out, "exp_elem");
  return out;
}

// elementwise log; requires strictly positive input
inline Tensor2D log_elem(const Tensor2D& a) {
  Tensor2D out = a;
  for (double& v : out.data) {
    if (v <= 0.0) throw ValueError("log_elem: input must be > 0");
    v = std::log(v);
  }
  ensure_finite(out, "log_elem");
  return out;
}

// i.i.d. normal draws; std == 0 degenerates to a constant tensor
inline Tensor2D rng_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean,
                           double std_dev) {
  if (std_dev < 0.0) throw ValueError("rng_normal: std must be >= 0");
  Tensor2D out(rows, cols);
  for (double& v : out.data) v = rng.normal(mean, std_dev);
  ensure_finite(out, "rng_normal");
  return out;
}

inline double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline bool bit_equal(const Tensor2D& a, const Tensor2D& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

}  // namespace weakstrong
