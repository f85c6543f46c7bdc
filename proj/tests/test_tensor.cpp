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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rnr/rope.hpp"
#include "rnr/tensor.hpp"

using namespace rnr;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const auto a = random_normal(3, 4, rng);
  EXPECT_EQ(matmul(Matrix<double>::identity(3), a), a);
  const Matrix<double> m{{1, 2}, {3, 4}};
  EXPECT_EQ(matmul(m, Matrix<double>::identity(2)), m);
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto a = random_normal(5, 7, rng), b = random_normal(7, 3, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, RejectsMismatchedShapes) {
  EXPECT_THROW(matmul(Matrix<double>(2, 3), Matrix<double>(2, 3)), std::invalid_argument);
}

TEST(Matmul, AssociativeWithinTolerance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto a = random_normal(6, 5, rng), b = random_normal(5, 7, rng), c = random_normal(7, 4, rng);
    const auto l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
    double scale = 0;
    for (double v : l.data()) scale = std::max(scale, std::abs(v));
    EXPECT_LE(max_abs_diff(l, r), 1e-9 * scale);
  }
}

TEST(Matrix, RejectsWrongDataLength) {
  EXPECT_THROW(Matrix<double>(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Softmax, UniformRow) {
  const auto s = row_softmax(Matrix<double>{{0, 0, 0}});
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto s = row_softmax(Matrix<double>{{1000, 0}});
  EXPECT_TRUE(s.all_finite());
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_LT(s(0, 1), 1e-300);
}

TEST(Softmax, MatchesExtendedPrecision) {
  const auto s = row_softmax(Matrix<double>{{1, 2, 3}});
  const auto ref = oracle::softmax({1, 2, 3});
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(s(0, i), static_cast<double>(ref[i]), 1e-12);
}

TEST(Softmax, RowsAreProbabilityVectors) {
  Rng rng(7);
  for (Index n : {1, 2, 15, 16, 17, 33, 100, 1000}) {
    auto a = random_normal(4, n, rng, 30.0);
    const auto s = row_softmax(a);
    for (Index i = 0; i < s.rows(); ++i) {
      double sum = 0;
      for (double v : s.row(i)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      std::vector<double> row(a.row(i).begin(), a.row(i).end());
      const auto ref = oracle::softmax(row);
      for (Index j = 0; j < n; ++j) EXPECT_NEAR(s(i, j), static_cast<double>(ref[j]), 1e-14);
    }
  }
}

TEST(Softmax, FloatPathIsAccurate) {
  Rng rng(8);
  auto a = random_normal(3, 77, rng, 5.0);
  const auto s = row_softmax(a.cast<float>());
  for (Index i = 0; i < 3; ++i) {
    std::vector<double> row(a.row(i).begin(), a.row(i).end());
    const auto ref = oracle::softmax(row);
    for (Index j = 0; j < 77; ++j) EXPECT_NEAR(s(i, j), static_cast<double>(ref[j]), 2e-6);
  }
}

TEST(FastExp, MatchesStdExp) {
  for (double x = -700; x < 700; x += 0.37) EXPECT_NEAR(detail::exp_fast(x) / std::exp(x), 1.0, 4e-16) << x;
  for (float x = -80; x < 80; x += 0.13f)
    EXPECT_NEAR(detail::exp_fast(x) / std::exp(static_cast<double>(x)), 1.0, 4e-7) << x;
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs = differs || x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, FixedEngineOutput) {
  // The 10000th output of a default-seeded mt19937_64 is fixed by the C++ standard.
  std::mt19937_64 eng;
  eng.discard(9999);
  EXPECT_EQ(eng(), 9981545732273789042ULL);
  Rng r(5489);
  for (int i = 0; i < 9999; ++i) r.next_u64();
  EXPECT_EQ(r.next_u64(), 9981545732273789042ULL);
}

TEST(Rng, IndexStaysInRange) {
  Rng r(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[r.index(7)];
  for (int h : hist) EXPECT_GT(h, 800);
  EXPECT_THROW(r.index(0), std::invalid_argument);
}

TEST(Grid, FlatteningIsTimeMajor) {
  const GridShape g{3, 4, 5};
  EXPECT_EQ(g.index(0, 0, 1), 1u);
  EXPECT_EQ(g.index(0, 1, 0), 5u);
  EXPECT_EQ(g.index(1, 0, 0), 20u);
  for (Index i = 0; i < g.size(); ++i) {
    const auto c = g.coord(i);
    EXPECT_EQ(g.index(c.t, c.h, c.w), i);
  }
  EXPECT_THROW((GridShape{0, 1, 1}.validate()), std::invalid_argument);
}

TEST(Rope, OriginIsUnchanged) {
  const GridShape g{2, 3, 3};
  Rng rng(9);
  const auto x = random_normal(g.size(), 12, rng);
  const auto y = apply_rope3d(x, g);
  for (Index c = 0; c < 12; ++c) EXPECT_EQ(y(0, c), x(0, c));
}

TEST(Rope, PreservesPairNormsAndTokenNorms) {
  const GridShape g{3, 4, 5};
  Rng rng(10);
  const auto x = random_normal(g.size(), 16, rng);
  const auto y = apply_rope3d(x, g, {10000.0, 2});
  for (Index i = 0; i < g.size(); ++i) {
    for (Index p = 0; p < 8; ++p) {
      const double a = std::hypot(x(i, 2 * p), x(i, 2 * p + 1));
      const double b = std::hypot(y(i, 2 * p), y(i, 2 * p + 1));
      EXPECT_NEAR(a, b, 1e-12);
    }
    EXPECT_NEAR(l2_norm(x.row(i)), l2_norm(y.row(i)), 1e-10);
  }
}

TEST(Rope, RotationDependsOnlyOnPosition) {
  const GridShape g{2, 2, 2};
  Rng rng(11);
  auto x = random_normal(1, 12, rng);
  Matrix<double> two(2, 12);
  for (Index c = 0; c < 12; ++c) two(0, c) = two(1, c) = x(0, c);
  const std::vector<Index> same{5, 5};
  const auto y = apply_rope3d_at(two, same, g);
  for (Index c = 0; c < 12; ++c) EXPECT_EQ(y(0, c), y(1, c));
  // Reduced-row application agrees with the full-grid application.
  const auto full = random_normal(g.size(), 12, rng);
  const std::vector<Index> pick{1, 6, 7};
  const auto a = apply_rope3d_at(gather_rows(full, pick), pick, g);
  const auto b = gather_rows(apply_rope3d(full, g), pick);
  EXPECT_EQ(a, b);
}

TEST(Rope, AxisSplitAndErrors) {
  const auto s = rope_axis_split(64);
  EXPECT_EQ(s.t_pairs, 16u);
  EXPECT_EQ(s.h_pairs, 8u);
  EXPECT_EQ(s.w_pairs, 8u);
  EXPECT_THROW(rope_axis_split(7), std::invalid_argument);
  EXPECT_THROW(rope_axis_split(4), std::invalid_argument);
  EXPECT_THROW(Rope3d(GridShape{2, 2, 2}, 10, {10000.0, 4}), std::invalid_argument);
}

TEST(Rope, EachAxisMovesItsOwnGroup) {
  const GridShape g{2, 2, 2};
  Matrix<double> x(g.size(), 12, 1.0);
  const auto y = apply_rope3d(x, g);
  // 6 pairs split (3, 1, 2): a token moved along h only rotates the h group.
  const auto s = rope_axis_split(12);
  const Index t_end = 2 * s.t_pairs, h_end = t_end + 2 * s.h_pairs;
  const Index tok_h = g.index(0, 1, 0);
  for (Index c = 0; c < t_end; ++c) EXPECT_EQ(y(tok_h, c), 1.0);
  EXPECT_NE(y(tok_h, t_end), 1.0);
  for (Index c = h_end; c < 12; ++c) EXPECT_EQ(y(tok_h, c), 1.0);
}

TEST(Checksum, SensitiveToValuesAndShape) {
  Matrix<double> a(2, 3, 1.0), b(3, 2, 1.0);
  EXPECT_NE(checksum(a), checksum(b));
  auto c = a;
  c(1, 2) = std::nextafter(1.0, 2.0);
  EXPECT_NE(checksum(a), checksum(c));
  EXPECT_EQ(checksum(a), checksum(Matrix<double>(2, 3, 1.0)));
}
