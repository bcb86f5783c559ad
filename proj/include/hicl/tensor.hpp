#pragma once

// Dense double-precision containers and the handful of BLAS-1/2 style
// kernels the rest of the library needs. Loop order is fixed everywhere so
// seeded runs accumulate in the same order bit for bit.

#include <cstddef>
#include <vector>

#include "hicl/common.hpp"

namespace hicl {

using Vector = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  Vector row_vec(std::size_t r) const {
    return Vector(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                  data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
  }

  void set_row(std::size_t r, const Vector& v) {
    require(v.size() == cols, "Matrix::set_row: size mismatch");
    for (std::size_t c = 0; c < cols; ++c) (*this)(r, c) = v[c];
  }
};

inline double dot(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

// y += alpha * x
inline void axpy(double alpha, const Vector& x, Vector& y) {
  require(x.size() == y.size(), "axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(const Vector& x, double alpha) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = alpha * x[i];
  return y;
}

// x / ||x||; throws on zero norm.
inline Vector normalized(const Vector& x) {
  double n = norm2(x);
  if (n == 0.0) throw NumericError("normalized: zero-norm vector");
  return scaled(x, 1.0 / n);
}

// M x  (M: out x in)
inline Vector matvec(const Matrix& m, const Vector& x) {
  require(x.size() == m.cols, "matvec: size mismatch");
  Vector y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

// M^T x  (M: out x in, x: out) -> in
inline Vector matvec_t(const Matrix& m, const Vector& x) {
  require(x.size() == m.rows, "matvec_t: size mismatch");
  Vector y(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
  }
  return y;
}

// M += u v^T
inline void add_outer(Matrix& m, const Vector& u, const Vector& v) {
  require(u.size() == m.rows && v.size() == m.cols, "add_outer: size mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += u[r] * v[c];
  }
}

inline double cosine(const Vector& a, const Vector& b) {
  double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm vector");
  return dot(a, b) / (na * nb);
}

}  // namespace hicl
