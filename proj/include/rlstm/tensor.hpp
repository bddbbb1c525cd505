#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlstm/errors.hpp"

namespace rlstm {

template <std::floating_point T>
using Vector = std::vector<T>;

/// Dense row-major matrix.
template <std::floating_point T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + shape_string());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace detail {

template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace detail

template <std::floating_point T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix<T> out(a.rows(), b.cols());
  constexpr std::size_t block = 64;
  for (std::size_t k0 = 0; k0 < a.cols(); k0 += block) {
    const std::size_t k1 = std::min(a.cols(), k0 + block);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      T* out_row = out.row(i).data();
      for (std::size_t k = k0; k < k1; ++k) {
        const T aik = a(i, k);
        const T* b_row = b.row(k).data();
        for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
      }
    }
  }
  return out;
}

// Kernels used by the recurrent layers. Callers are responsible for sizes.

/// y += M x
template <class T>
inline void gemv_add(const Matrix<T>& m, std::span<const T> x, std::span<T> y) noexcept {
  const std::size_t cols = m.cols();
  const T* p = m.values().data();
  for (std::size_t r = 0; r < m.rows(); ++r, p += cols) {
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += p[c] * x[c];
    y[r] += acc;
  }
}

/// y += M^T g
template <class T>
inline void gemv_transposed_add(const Matrix<T>& m, std::span<const T> g, std::span<T> y) noexcept {
  const std::size_t cols = m.cols();
  const T* p = m.values().data();
  for (std::size_t r = 0; r < m.rows(); ++r, p += cols) {
    const T gr = g[r];
    if (gr == T(0)) continue;
    for (std::size_t c = 0; c < cols; ++c) y[c] += p[c] * gr;
  }
}

/// M += g x^T
template <class T>
inline void outer_add(Matrix<T>& m, std::span<const T> g, std::span<const T> x) noexcept {
  const std::size_t cols = m.cols();
  T* p = m.values().data();
  for (std::size_t r = 0; r < m.rows(); ++r, p += cols) {
    const T gr = g[r];
    if (gr == T(0)) continue;
    for (std::size_t c = 0; c < cols; ++c) p[c] += gr * x[c];
  }
}

/// y += M[:, col]
template <class T>
inline void add_column(const Matrix<T>& m, std::size_t col, std::span<T> y) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] += m(r, col);
}

/// M[:, col] += g
template <class T>
inline void accumulate_column(Matrix<T>& m, std::size_t col, std::span<const T> g) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r) m(r, col) += g[r];
}

template <std::floating_point T>
inline T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// v - max(v) - log(sum(exp(v - max(v)))), accumulated in double.
template <std::floating_point T>
Vector<T> log_softmax(std::span<const T> v) {
  if (v.empty()) throw ArgumentError("log_softmax: empty vector");
  const T peak = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (T x : v) sum += std::exp(static_cast<double>(x) - static_cast<double>(peak));
  const double log_z = static_cast<double>(peak) + std::log(sum);
  Vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(v[i]) - log_z);
  }
  return out;
}

template <std::floating_point T>
Vector<T> log_softmax(const Vector<T>& v) {
  return log_softmax(std::span<const T>(v));
}

enum class UnaryOp { sigmoid, tanh };
enum class BinaryOp { add, mul };

template <std::floating_point T>
Matrix<T> elementwise(UnaryOp op, const Matrix<T>& a) {
  Matrix<T> out = a;
  for (T& x : out.values()) x = op == UnaryOp::sigmoid ? sigmoid(x) : std::tanh(x);
  return out;
}

template <std::floating_point T>
Matrix<T> elementwise(BinaryOp op, const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape(a, b, op == BinaryOp::add ? "add" : "mul");
  Matrix<T> out = a;
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = op == BinaryOp::add ? dst[i] + src[i] : dst[i] * src[i];
  }
  return out;
}

template <std::floating_point T>
Matrix<T> operator-(const Matrix<T>& a) {
  Matrix<T> out = a;
  for (T& x : out.values()) x = -x;
  return out;
}

template <std::floating_point T>
bool all_finite(std::span<const T> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// xoshiro256** seeded through splitmix64. Streams depend only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below: empty range");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Fisher-Yates; independent of the standard library's shuffle algorithm.
  template <class Range>
  void shuffle(Range& range) {
    const auto n = static_cast<std::uint64_t>(std::size(range));
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      using std::swap;
      swap(range[i - 1], range[j]);
    }
  }

  /// Child generator for an independent sub-stream.
  Rng split() noexcept { return Rng(next_u64()); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
};

template <std::floating_point T>
void fill_uniform(std::span<T> v, Rng& rng, double lo, double hi) {
  for (T& x : v) x = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace rlstm
