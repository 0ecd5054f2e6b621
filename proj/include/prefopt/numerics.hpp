#pragma once

/**
 * numerics.hpp - Dense (prompt x response) tables and shared scalar kernels
 *
 * Numeric policy for the whole library:
 *   - double precision everywhere;
 *   - reductions run left-to-right in index order, so a fixed input always
 *     produces bit-identical output;
 *   - log-sum-exp subtracts the row max before exponentiating;
 *   - sigmoid/log-sigmoid use the sign-split stable forms;
 *   - 0 * log 0 counts as 0 in entropy-like sums;
 *   - probabilities below k_support_floor count as "no support".
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <vector>

#include "errors.hpp"

namespace prefopt {

/** Probabilities below this floor are treated as unsupported. */
inline constexpr double k_support_floor = 1e-12;

// ============================================================================
// Matrix: row-major table indexed by (prompt, response)
// ============================================================================

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;

  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {
    require(r > 0 && c > 0, "Matrix: dimensions must be positive");
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& src) {
    require(!src.empty() && !src[0].empty(), "Matrix::from_rows: empty input");
    Matrix m(src.size(), src[0].size());
    for (std::size_t r = 0; r < m.rows; ++r) {
      require(src[r].size() == m.cols, "Matrix::from_rows: ragged rows");
      for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = src[r][c];
    }
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/** True iff the two doubles have identical bit patterns. */
inline bool bitwise_equal_scalar(double a, double b) {
  std::uint64_t ua, ub;
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&ua, &a, sizeof(double));
  std::memcpy(&ub, &b, sizeof(double));
  return ua == ub;
}

/** True iff both matrices have identical shape and bit-identical entries. */
inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    // NOTE: compare bit patterns, not values, so -0.0 vs 0.0 and NaN are exact.
    std::uint64_t ua, ub;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    std::memcpy(&ua, &a.data[i], sizeof(double));
    std::memcpy(&ub, &b.data[i], sizeof(double));
    if (ua != ub) return false;
  }
  return true;
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.data) best = std::max(best, std::abs(v));
  return best;
}

// ============================================================================
// Scalar kernels
// ============================================================================

/** Stable logistic sigmoid. sigmoid(x) + sigmoid(-x) = 1 to within 1 ulp. */
inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double u = std::exp(-x);
    return 1.0 / (1.0 + u);
  }
  const double u = std::exp(x);
  return u / (1.0 + u);
}

/** Stable log(sigmoid(x)). */
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

/** log(sum_i exp(v_i)) with row-max subtraction. Requires n > 0, finite v. */
inline double logsumexp(const double* v, std::size_t n) {
  double m = v[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

// ============================================================================
// Gauge fixing
// ============================================================================

/** Residual row means below k_gauge_tol * max(1, row scale) count as zero. */
inline constexpr double k_gauge_tol = 1e-13;

/**
 * Subtracts the row mean, iterating until the residual mean falls below
 * k_gauge_tol relative to the row scale. The stopping test depends only on
 * the current row contents, so a second call returns without touching the
 * row: gauge fixing is bitwise idempotent, which is what lets gauge-centering
 * a policy leave its probabilities bit-identical.
 */
inline void gauge_fix_row(double* v, std::size_t n) {
  if (n == 0) return;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double s = 0.0;
    double scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += v[i];
      scale = std::max(scale, std::abs(v[i]));
    }
    const double m = s / static_cast<double>(n);
    if (std::abs(m) <= k_gauge_tol * scale) return;
    for (std::size_t i = 0; i < n; ++i) v[i] -= m;
  }
}

/**
 * Writes softmax of a gauge-fixed logit row into out. The input row is first
 * gauge-fixed in place (mean removed), then exponentiated against the row max.
 */
inline void softmax_row_gauge_fixed(double* logits_scratch, double* out, std::size_t n) {
  gauge_fix_row(logits_scratch, n);
  double m = logits_scratch[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits_scratch[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(logits_scratch[i] - m);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

/** Writes log-softmax of a gauge-fixed logit row into out. */
inline void log_softmax_row_gauge_fixed(double* logits_scratch, double* out, std::size_t n) {
  gauge_fix_row(logits_scratch, n);
  const double lz = logsumexp(logits_scratch, n);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits_scratch[i] - lz;
}

// ============================================================================
// Distances
// ============================================================================

/** Total-variation distance between two length-n probability rows: 0.5 * L1. */
inline double tv_distance_row(const double* p, const double* q, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

/** Per-row total-variation distances between two row-stochastic matrices. */
inline std::vector<double> tv_distance_rows(const Matrix& p, const Matrix& q) {
  require(p.same_shape(q), "tv_distance_rows: shape mismatch");
  std::vector<double> out(p.rows);
  for (std::size_t r = 0; r < p.rows; ++r)
    out[r] = tv_distance_row(p.row(r), q.row(r), p.cols);
  return out;
}

/** Maximum per-row total-variation distance. */
inline double max_tv_distance(const Matrix& p, const Matrix& q) {
  double best = 0.0;
  for (double v : tv_distance_rows(p, q)) best = std::max(best, v);
  return best;
}

}  // namespace prefopt
