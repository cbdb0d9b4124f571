#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedcp/common.hpp"

namespace fedcp {

/// Dense row-major f64 matrix. The whole library runs in double precision;
/// gradient checks need the headroom.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(std::size_t(r) * c, fill) {}

  double& operator()(int i, int j) { return a[std::size_t(i) * cols + j]; }
  double operator()(int i, int j) const { return a[std::size_t(i) * cols + j]; }
  double* row(int i) { return a.data() + std::size_t(i) * cols; }
  const double* row(int i) const { return a.data() + std::size_t(i) * cols; }
  bool empty() const { return rows == 0 || cols == 0; }
  std::size_t size() const { return a.size(); }
};

/// Mutable non-owning view (ParamVector slices hand these out).
struct MutMat {
  double* p = nullptr;
  int rows = 0, cols = 0;

  MutMat() = default;
  MutMat(double* d, int r, int c) : p(d), rows(r), cols(c) {}
  MutMat(Matrix& m) : p(m.a.data()), rows(m.rows), cols(m.cols) {}

  double& operator()(int i, int j) const { return p[std::size_t(i) * cols + j]; }
  double* row(int i) const { return p + std::size_t(i) * cols; }
};

/// Read-only non-owning view; binds Matrix, MutMat, or a raw slice.
struct ConstMat {
  const double* p = nullptr;
  int rows = 0, cols = 0;

  ConstMat() = default;
  ConstMat(const double* d, int r, int c) : p(d), rows(r), cols(c) {}
  ConstMat(const Matrix& m) : p(m.a.data()), rows(m.rows), cols(m.cols) {}
  ConstMat(const MutMat& m) : p(m.p), rows(m.rows), cols(m.cols) {}

  double operator()(int i, int j) const { return p[std::size_t(i) * cols + j]; }
  const double* row(int i) const { return p + std::size_t(i) * cols; }
};

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw KernelError(msg);
}
inline std::string shape_str(ConstMat m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}
}  // namespace detail

inline Matrix to_matrix(ConstMat m) {
  Matrix out(m.rows, m.cols);
  std::copy(m.p, m.p + std::size_t(m.rows) * m.cols, out.a.begin());
  return out;
}

inline bool all_finite(ConstMat m) {
  for (std::size_t i = 0; i < std::size_t(m.rows) * m.cols; ++i)
    if (!std::isfinite(m.p[i])) return false;
  return true;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// C = A * B
inline Matrix matmul(ConstMat a, ConstMat b) {
  detail::require(a.cols == b.rows, "matmul: " + detail::shape_str(a) + " * " + detail::shape_str(b));
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// C = A^T * B
inline Matrix matmul_tn(ConstMat a, ConstMat b) {
  detail::require(a.rows == b.rows, "matmul_tn: " + detail::shape_str(a) + "^T * " + detail::shape_str(b));
  Matrix c(a.cols, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    const double* brow = b.row(i);
    for (int k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      double* crow = c.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// C = A * B^T
inline Matrix matmul_nt(ConstMat a, ConstMat b) {
  detail::require(a.cols == b.cols, "matmul_nt: " + detail::shape_str(a) + " * " + detail::shape_str(b) + "^T");
  Matrix c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      crow[j] += s;
    }
  }
  return c;
}

inline void add_inplace(Matrix& dst, ConstMat src, double scale = 1.0) {
  detail::require(dst.rows == src.rows && dst.cols == src.cols,
                  "add_inplace: " + detail::shape_str(dst) + " += " + detail::shape_str(src));
  for (std::size_t i = 0; i < dst.size(); ++i) dst.a[i] += scale * src.p[i];
}

inline void add_inplace(MutMat dst, ConstMat src, double scale = 1.0) {
  detail::require(dst.rows == src.rows && dst.cols == src.cols,
                  "add_inplace: view += " + detail::shape_str(src));
  for (std::size_t i = 0; i < std::size_t(dst.rows) * dst.cols; ++i) dst.p[i] += scale * src.p[i];
}

inline Matrix hadamard(ConstMat a, ConstMat b) {
  detail::require(a.rows == b.rows && a.cols == b.cols,
                  "hadamard: " + detail::shape_str(a) + " . " + detail::shape_str(b));
  Matrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < c.size(); ++i) c.a[i] = a.p[i] * b.p[i];
  return c;
}

/// Horizontal concatenation [A | B].
inline Matrix hconcat(ConstMat a, ConstMat b) {
  detail::require(a.rows == b.rows, "hconcat: row mismatch");
  Matrix c(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    std::copy(a.row(i), a.row(i) + a.cols, c.row(i));
    std::copy(b.row(i), b.row(i) + b.cols, c.row(i) + a.cols);
  }
  return c;
}

/// Vertical concatenation [A; B].
inline Matrix vconcat(ConstMat a, ConstMat b) {
  detail::require(a.cols == b.cols || a.rows == 0 || b.rows == 0, "vconcat: col mismatch");
  int cols = a.rows > 0 ? a.cols : b.cols;
  Matrix c(a.rows + b.rows, cols);
  for (int i = 0; i < a.rows; ++i) std::copy(a.row(i), a.row(i) + cols, c.row(i));
  for (int i = 0; i < b.rows; ++i) std::copy(b.row(i), b.row(i) + cols, c.row(a.rows + i));
  return c;
}

inline Matrix select_rows(ConstMat m, const std::vector<int>& rows) {
  Matrix out(int(rows.size()), m.cols);
  for (int i = 0; i < out.rows; ++i) {
    detail::require(rows[i] >= 0 && rows[i] < m.rows, "select_rows: index out of range");
    std::copy(m.row(rows[i]), m.row(rows[i]) + m.cols, out.row(i));
  }
  return out;
}

inline Matrix randn_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& x : m.a) x = scale * rng.normal();
  return m;
}

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fedcp
