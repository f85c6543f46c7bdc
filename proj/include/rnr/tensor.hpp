// Copyright 2026 The rnr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rnr/detail/fastmath.hpp"

namespace rnr {

using Index = std::size_t;

/// Dense row-major matrix. Rows are tokens, columns are features.
template <class T = double>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(Index rows, Index cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(Index rows, Index cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " != rows*cols " + std::to_string(rows_ * cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(Index n) {
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(Index r, Index c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(Index r, Index c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(Index r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(Index r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<T> data_;
};

/// Shape of a (T,H,W) token grid. Tokens are flattened t-major:
/// index = ((t * h_dim) + h) * w_dim + w.
struct GridShape {
  Index t = 1;
  Index h = 1;
  Index w = 1;

  Index size() const noexcept { return t * h * w; }
  Index index(Index ti, Index hi, Index wi) const noexcept { return (ti * h + hi) * w + wi; }

  struct Coord {
    Index t, h, w;
  };
  Coord coord(Index idx) const noexcept { return {idx / (h * w), (idx / w) % h, idx % w}; }

  void validate() const {
    if (t < 1 || h < 1 || w < 1) throw std::invalid_argument("GridShape: all dims must be >= 1");
  }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

template <class T = double>
struct TokenGrid {
  GridShape shape;
  Matrix<T> tokens;

  TokenGrid() = default;
  TokenGrid(GridShape s, Matrix<T> m) : shape(s), tokens(std::move(m)) {
    shape.validate();
    if (tokens.rows() != shape.size())
      throw std::invalid_argument("TokenGrid: token rows do not match grid size");
  }
  Index feature_dim() const noexcept { return tokens.cols(); }
};

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the mappings to uniform/normal/index below are
/// written out so streams are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased via rejection.
  Index index(Index n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    const std::uint64_t range = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return static_cast<Index>(x % range);
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform();
    while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent child stream: splitmix64 of (seed, stream).
  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x9E3779B97F4A7C15ULL))); }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <class T = double>
Matrix<T> random_normal(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(rng.normal() * stddev);
  return m;
}

/// C = A * B. Accumulation runs over the inner index in ascending order for
/// every output entry, using fused multiply-add.
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  const Index n = a.rows(), k = a.cols(), m = b.cols();
  Matrix<T> c(n, m);
  const T* bp = b.data().data();
  for (Index i = 0; i < n; ++i) {
    T* crow = c.row(i).data();
    const T* arow = a.row(i).data();
    for (Index p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = bp + p * m;
      for (Index j = 0; j < m; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
  return c;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// In-place softmax of one row, stabilized by subtracting the row maximum.
template <class T>
void softmax_inplace(std::span<T> row) {
  detail::scaled_softmax(row.data(), row.size(), T{1});
}

template <class T>
Matrix<T> row_softmax(Matrix<T> a) {
  for (Index i = 0; i < a.rows(); ++i) softmax_inplace(a.row(i));
  return a;
}

template <class T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  T m{0};
  for (Index i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <class T>
T l2_norm(std::span<const T> v) {
  T s{0};
  for (T x : v) s = std::fma(x, x, s);
  return std::sqrt(s);
}

/// Rows gathered in the given order.
template <class T>
Matrix<T> gather_rows(const Matrix<T>& a, std::span<const Index> rows) {
  Matrix<T> out(rows.size(), a.cols());
  for (Index i = 0; i < rows.size(); ++i) {
    auto src = a.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// FNV-1a over the bit patterns of every entry, shape included.
template <class T>
std::uint64_t checksum(const Matrix<T>& a) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t r = a.rows(), c = a.cols();
  feed(&r, sizeof r);
  feed(&c, sizeof c);
  feed(a.data().data(), a.data().size() * sizeof(T));
  return h;
}

}  // namespace rnr
