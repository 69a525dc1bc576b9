#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/rng.hpp"

namespace relbal {

// Row-major dense matrix of doubles. Everything in this project is small
// (d <= 768, N <= 8, K <= 20), so there is no sparse or blocked storage.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix row_vector(std::vector<double> v) {
    Matrix m;
    m.rows = 1;
    m.cols = v.size();
    m.data = std::move(v);
    return m;
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b))
    fail(ErrorKind::shape, std::string(what) + ": shapes " + std::to_string(a.rows) + "x" +
                               std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                               std::to_string(b.cols));
}

// C = A * B. ikj loop order so the inner loop is a contiguous axpy.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    fail(ErrorKind::shape, "matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                               std::to_string(b.rows));
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* crow = c.row(i);
    const double* arow = a.row(i);
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A^T * B, without materializing the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    fail(ErrorKind::shape, "matmul_at_b: row counts " + std::to_string(a.rows) + " vs " +
                               std::to_string(b.rows));
  Matrix c(a.cols, b.cols);
  for (std::size_t p = 0; p < a.rows; ++p) {
    const double* arow = a.row(p);
    const double* brow = b.row(p);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    fail(ErrorKind::shape, "matmul_a_bt: col counts " + std::to_string(a.cols) + " vs " +
                               std::to_string(b.cols));
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = stddev * rng.next_gaussian();
  return m;
}

constexpr double kLogFloor = 1e-12;

// log(max(p_i, floor)); the floor guards the loss and entropy terms
// against log(0).
inline std::vector<double> stable_log(const std::vector<double>& p, double floor = kLogFloor) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(std::max(p[i], floor));
  return out;
}

// Max-subtracted softmax of logits/temperature, written into out[0..n).
inline void softmax_inplace(const double* logits, std::size_t n, double temperature, double* out) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

inline std::vector<double> softmax(const std::vector<double>& logits, double temperature = 1.0) {
  if (logits.empty()) fail(ErrorKind::invalid_input, "softmax: empty input");
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_input, "softmax: temperature must be > 0");
  for (double v : logits)
    if (!std::isfinite(v)) fail(ErrorKind::invalid_input, "softmax: non-finite logit");
  std::vector<double> out(logits.size());
  softmax_inplace(logits.data(), logits.size(), temperature, out.data());
  return out;
}

// Row-wise softmax of a matrix of logits.
inline Matrix softmax_rows(const Matrix& logits, double temperature = 1.0) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r)
    softmax_inplace(logits.row(r), logits.cols, temperature, out.row(r));
  return out;
}

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    fail(ErrorKind::shape, "euclidean_distance: dimensions " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace relbal
