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

#include <cstddef>
#include <limits>

#include "rnr/detail/simd.hpp"

// Branch-free exp and fixed-lane reductions. Scalar and pack code paths run
// the same IEEE operation sequence, so results never depend on the vector
// width or on the libm in use.

namespace rnr::detail {

/// Number of interleaved partial accumulators used by every reduction.
inline constexpr std::size_t kLanes = 16;

template <class V>
V exp_impl(V x) {
  using T = typename ScalarOf<V>::type;
  if constexpr (sizeof(T) == 8) {
    x = vmin(splat<V>(709.0), vmax(splat<V>(-708.0), x));
    const V n = vfloor(vfmadd(x, splat<V>(1.4426950408889634074), splat<V>(0.5)));
    const V r = vfmadd(n, splat<V>(-0x1.a39ef35793c76p-33), vfmadd(n, splat<V>(-0x1.62e42fee00000p-1), x));
    // Taylor series through r^12; |r| <= ln2/2 keeps the tail below 2.5e-16.
    V p = splat<V>(1.0 / 479001600.0);
    p = vfmadd(p, r, splat<V>(1.0 / 39916800.0));
    p = vfmadd(p, r, splat<V>(1.0 / 3628800.0));
    p = vfmadd(p, r, splat<V>(1.0 / 362880.0));
    p = vfmadd(p, r, splat<V>(1.0 / 40320.0));
    p = vfmadd(p, r, splat<V>(1.0 / 5040.0));
    p = vfmadd(p, r, splat<V>(1.0 / 720.0));
    p = vfmadd(p, r, splat<V>(1.0 / 120.0));
    p = vfmadd(p, r, splat<V>(1.0 / 24.0));
    p = vfmadd(p, r, splat<V>(1.0 / 6.0));
    p = vfmadd(p, r, splat<V>(0.5));
    p = vfmadd(p, r, splat<V>(1.0));
    p = vfmadd(p, r, splat<V>(1.0));
    return p * vpow2i(n);
  } else {
    x = vmin(splat<V>(88.0f), vmax(splat<V>(-87.0f), x));
    const V n = vfloor(vfmadd(x, splat<V>(1.44269504f), splat<V>(0.5f)));
    const V r = vfmadd(n, splat<V>(2.12194440e-4f), vfmadd(n, splat<V>(-0.693359375f), x));
    V p = splat<V>(1.0f / 5040.0f);
    p = vfmadd(p, r, splat<V>(1.0f / 720.0f));
    p = vfmadd(p, r, splat<V>(1.0f / 120.0f));
    p = vfmadd(p, r, splat<V>(1.0f / 24.0f));
    p = vfmadd(p, r, splat<V>(1.0f / 6.0f));
    p = vfmadd(p, r, splat<V>(0.5f));
    p = vfmadd(p, r, splat<V>(1.0f));
    p = vfmadd(p, r, splat<V>(1.0f));
    return p * vpow2i(n);
  }
}

inline double exp_fast(double x) { return exp_impl(x); }
inline float exp_fast(float x) { return exp_impl(x); }

/// Sum with kLanes interleaved partial sums combined in lane order.
template <class T>
T sum_reduce(const T* p, std::size_t n) {
  using P = Pack<T>;
  constexpr std::size_t W = P::kWidth;
  static_assert(kLanes % W == 0);
  constexpr std::size_t NP = kLanes / W;
  P acc[NP];
  for (auto& a : acc) a = P::zero();
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t k = 0; k < NP; ++k) acc[k] = acc[k] + P::load(p + j + k * W);
  T lanes[kLanes];
  for (std::size_t k = 0; k < NP; ++k) acc[k].store(lanes + k * W);
  for (std::size_t l = 0; j < n; ++j, ++l) lanes[l] += p[j];
  T s{0};
  for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
  return s;
}

template <class T>
T max_reduce(const T* p, std::size_t n) {
  using P = Pack<T>;
  constexpr std::size_t W = P::kWidth;
  constexpr std::size_t NP = kLanes / W;
  P acc[NP];
  for (auto& a : acc) a = P::broadcast(-std::numeric_limits<T>::infinity());
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t k = 0; k < NP; ++k) acc[k] = vmax(P::load(p + j + k * W), acc[k]);
  T lanes[kLanes];
  for (std::size_t k = 0; k < NP; ++k) acc[k].store(lanes + k * W);
  for (std::size_t l = 0; j < n; ++j, ++l) lanes[l] = vmax(p[j], lanes[l]);
  T m = lanes[0];
  for (std::size_t l = 1; l < kLanes; ++l) m = vmax(lanes[l], m);
  return m;
}

/// p[j] = exp((p[j] - shift) * scale).
template <class T>
void exp_shift_scale(T* p, std::size_t n, T shift, T scale) {
  using P = Pack<T>;
  constexpr std::size_t W = P::kWidth;
  const P vs = P::broadcast(shift), vc = P::broadcast(scale);
  std::size_t j = 0;
  for (; j + W <= n; j += W) exp_impl((P::load(p + j) - vs) * vc).store(p + j);
  for (; j < n; ++j) p[j] = exp_impl((p[j] - shift) * scale);
}

template <class T>
void divide_by(T* p, std::size_t n, T denom) {
  using P = Pack<T>;
  constexpr std::size_t W = P::kWidth;
  const P vd = P::broadcast(denom);
  std::size_t j = 0;
  for (; j + W <= n; j += W) (P::load(p + j) / vd).store(p + j);
  for (; j < n; ++j) p[j] = p[j] / denom;
}

/// Softmax of (row * scale), stabilized by the row maximum.
template <class T>
void scaled_softmax(T* row, std::size_t n, T scale) {
  if (n == 0) return;
  const T mx = max_reduce(row, n);
  exp_shift_scale(row, n, mx, scale);
  divide_by(row, n, sum_reduce(row, n));
}

}  // namespace rnr::detail
