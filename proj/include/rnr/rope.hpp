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

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnr/tensor.hpp"

// 3D rotary position embedding.
//
// Each head's feature slice of width D is viewed as D/2 adjacent pairs. The
// pairs are split into three contiguous groups for the t, h and w axes in
// proportion 2:1:1 (t gets floor(P/2) pairs, h gets half of the remainder,
// w the rest). Pair j of a group with G pairs rotates by
// coord * base^(-j/G).

namespace rnr {

struct RopeOptions {
  double base = 10000.0;
  Index heads = 1;
};

struct RopeAxisSplit {
  Index t_pairs, h_pairs, w_pairs;
};

inline RopeAxisSplit rope_axis_split(Index head_dim) {
  if (head_dim % 2 != 0)
    throw std::invalid_argument("rope: head dim " + std::to_string(head_dim) + " is odd");
  const Index pairs = head_dim / 2;
  RopeAxisSplit s{};
  s.t_pairs = pairs / 2;
  s.h_pairs = (pairs - s.t_pairs) / 2;
  s.w_pairs = pairs - s.t_pairs - s.h_pairs;
  if (s.t_pairs == 0 || s.h_pairs == 0 || s.w_pairs == 0)
    throw std::invalid_argument("rope: head dim " + std::to_string(head_dim) +
                                " cannot be split across three axes");
  return s;
}

namespace detail {

struct RopeTables {
  // Per pair within a head: which axis it follows and its inverse frequency.
  std::vector<int> axis;
  std::vector<double> inv_freq;
};

inline RopeTables rope_tables(Index head_dim, double base) {
  const RopeAxisSplit split = rope_axis_split(head_dim);
  RopeTables tab;
  auto add_group = [&](int ax, Index g) {
    for (Index j = 0; j < g; ++j) {
      tab.axis.push_back(ax);
      tab.inv_freq.push_back(std::pow(base, -static_cast<double>(j) / static_cast<double>(g)));
    }
  };
  add_group(0, split.t_pairs);
  add_group(1, split.h_pairs);
  add_group(2, split.w_pairs);
  return tab;
}

}  // namespace detail

/// Precomputed rotation table for every position of a grid.
class Rope3d {
 public:
  Rope3d(const GridShape& grid, Index feature_dim, const RopeOptions& opt = {})
      : grid_(grid), heads_(opt.heads), feature_dim_(feature_dim) {
    grid.validate();
    if (heads_ == 0 || feature_dim % heads_ != 0)
      throw std::invalid_argument("rope: feature dim not divisible by heads");
    const auto tab = detail::rope_tables(feature_dim / heads_, opt.base);
    pairs_ = tab.axis.size();
    cos_.resize(grid.size() * pairs_);
    sin_.resize(grid.size() * pairs_);
    for (Index i = 0; i < grid.size(); ++i) {
      const auto c = grid.coord(i);
      const double coord[3] = {static_cast<double>(c.t), static_cast<double>(c.h), static_cast<double>(c.w)};
      for (Index j = 0; j < pairs_; ++j) {
        const double angle = coord[tab.axis[j]] * tab.inv_freq[j];
        cos_[i * pairs_ + j] = std::cos(angle);
        sin_[i * pairs_ + j] = std::sin(angle);
      }
    }
  }

  const GridShape& grid() const noexcept { return grid_; }

  /// Rotates row r by the grid coordinates of token `token_index[r]`. Used for
  /// reduced sequences, whose rows keep their original positions.
  template <class T>
  Matrix<T> apply(Matrix<T> x, std::span<const Index> token_index) const {
    if (x.cols() != feature_dim_) throw std::invalid_argument("rope: feature dim mismatch");
    if (token_index.size() != x.rows()) throw std::invalid_argument("rope: one position per row required");
    const Index head_dim = feature_dim_ / heads_;
    for (Index r = 0; r < x.rows(); ++r) {
      const Index tok = token_index[r];
      if (tok >= grid_.size()) throw std::out_of_range("rope: token index outside grid");
      auto row = x.row(r);
      for (Index j = 0; j < pairs_; ++j) {
        const double cs = cos_[tok * pairs_ + j], sn = sin_[tok * pairs_ + j];
        for (Index h = 0; h < heads_; ++h) {
          T& x0 = row[h * head_dim + 2 * j];
          T& x1 = row[h * head_dim + 2 * j + 1];
          const double a = x0, b = x1;
          x0 = static_cast<T>(a * cs - b * sn);
          x1 = static_cast<T>(a * sn + b * cs);
        }
      }
    }
    return x;
  }

  /// Rotates every token of the full grid (row i is token i).
  template <class T>
  Matrix<T> apply(Matrix<T> x) const {
    if (x.rows() != grid_.size()) throw std::invalid_argument("rope: row count does not match grid");
    std::vector<Index> idx(x.rows());
    for (Index i = 0; i < idx.size(); ++i) idx[i] = i;
    return apply(std::move(x), std::span<const Index>(idx));
  }

 private:
  GridShape grid_;
  Index heads_;
  Index feature_dim_;
  Index pairs_ = 0;
  std::vector<double> cos_, sin_;
};

template <class T>
Matrix<T> apply_rope3d_at(Matrix<T> x, std::span<const Index> token_index, const GridShape& grid,
                          const RopeOptions& opt = {}) {
  return Rope3d(grid, x.cols(), opt).apply(std::move(x), token_index);
}

template <class T>
Matrix<T> apply_rope3d(Matrix<T> x, const GridShape& grid, const RopeOptions& opt = {}) {
  return Rope3d(grid, x.cols(), opt).apply(std::move(x));
}

}  // namespace rnr
