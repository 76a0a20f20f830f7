// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Small dense numerics shared by the rest of the library. Everything is double
// precision; nothing here tries to compete with a BLAS.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "afa/error.hpp"

namespace afa {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_,
            "Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                shape_string());
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Rng: mt19937_64 core (bit-identical across conforming standard libraries),
// uniform doubles from the top 53 bits, Gaussians by Box-Muller. The standard
// distributions are avoided on purpose since their output is implementation
// defined. split() derives independent child streams through splitmix64.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n).
  std::size_t index(std::size_t n) {
    require(n > 0, "Rng::index: empty range");
    return static_cast<std::size_t>(engine_() % n);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Child stream; the parent sequence is not advanced.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal(0.0, stddev);
  return m;
}

// Rounds every entry to the nearest 32-bit float. Parameters are kept
// f32-representable so on-disk checkpoints reproduce them exactly.
inline void round_to_f32(Matrix& m) {
  for (double& x : m.data()) x = static_cast<double>(static_cast<float>(x));
}

// ---------------------------------------------------------------------------
// Vector / matrix operations
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: dimension mismatch " + a.shape_string() + " x " +
                        b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      auto brow = b.row(p);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

// m * v
inline Vector matvec(const Matrix& m, std::span<const double> v) {
  if (m.cols() != v.size()) {
    throw ContractError("matvec: dimension mismatch " + m.shape_string() + " x (" +
                        std::to_string(v.size()) + ")");
  }
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

// m^T * v
inline Vector matvec_transposed(const Matrix& m, std::span<const double> v) {
  if (m.rows() != v.size()) {
    throw ContractError("matvec_transposed: dimension mismatch " + m.shape_string() +
                        "^T x (" + std::to_string(v.size()) + ")");
  }
  Vector out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += vi * r[j];
  }
  return out;
}

// g += scale * a b^T
inline void add_outer(Matrix& g, std::span<const double> a, std::span<const double> b,
                      double scale = 1.0) {
  require(g.rows() == a.size() && g.cols() == b.size(), "add_outer: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = scale * a[i];
    if (s == 0.0) continue;
    auto r = g.row(i);
    for (std::size_t j = 0; j < b.size(); ++j) r[j] += s * b[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: dimension mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

inline Vector softmax(std::span<const double> x) {
  require(!x.empty(), "softmax: empty vector");
  const double mx = *std::max_element(x.begin(), x.end());
  Vector out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline double log_sum_exp(std::span<const double> x) {
  require(!x.empty(), "log_sum_exp: empty vector");
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

// Indices of the k largest entries, in descending value order; equal values
// resolve to the lower index.
inline std::vector<std::size_t> topk_indices(std::span<const double> w, std::size_t k) {
  require(k >= 1 && k <= w.size(), "topk: k=" + std::to_string(k) + " outside [1, " +
                                       std::to_string(w.size()) + "]");
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return w[a] > w[b] || (w[a] == w[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

// Keeps the k largest entries unchanged and zeroes the rest. No renormalization.
inline Vector topk_mask(std::span<const double> w, std::size_t k) {
  Vector out(w.size(), 0.0);
  for (std::size_t i : topk_indices(w, k)) out[i] = w[i];
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine: dimension mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
  const double na = norm(a);
  const double nb = norm(b);
  require(na > 0.0 && nb > 0.0, "cosine: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Vector normalize(std::span<const double> v) {
  const double n = norm(v);
  require(n > 0.0, "normalize: zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace afa
