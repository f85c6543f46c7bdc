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

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#define RNR_SIMD_AVX512 1
#elif defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define RNR_SIMD_AVX2 1
#endif

// Fixed-width packs used by the attention micro-kernels. Every backend
// performs the same correctly rounded fused multiply-add per lane, so the
// vector and portable paths produce bit-identical results.

namespace rnr::detail {

/// 2^n for integral n in the normal exponent range, using the same
/// shifted-magic-number trick as the vector backends.
inline double pow2i_scalar(double n) {
  const auto t = std::bit_cast<std::int64_t>(n + 0x1.8p52) - std::bit_cast<std::int64_t>(0x1.8p52);
  return std::bit_cast<double>(static_cast<std::uint64_t>(t + 1023) << 52);
}
inline float pow2i_scalar(float n) {
  const auto t = std::bit_cast<std::int32_t>(n + 0x1.8p23f) - std::bit_cast<std::int32_t>(0x1.8p23f);
  return std::bit_cast<float>(static_cast<std::uint32_t>(t + 127) << 23);
}

// Scalar counterparts of the pack operations, same semantics lane for lane.
template <class T>
T vmax(T a, T b) { return a > b ? a : b; }
template <class T>
T vmin(T a, T b) { return a < b ? a : b; }
template <class T>
T vfmadd(T a, T b, T c) { return std::fma(a, b, c); }
template <class T>
T vfloor(T a) { return std::floor(a); }
inline double vpow2i(double n) { return pow2i_scalar(n); }
inline float vpow2i(float n) { return pow2i_scalar(n); }

template <class T>
struct Pack;

#if defined(RNR_SIMD_AVX512)

template <>
struct Pack<double> {
  static constexpr int kWidth = 8;
  __m512d v;
  static Pack zero() { return {_mm512_setzero_pd()}; }
  static Pack load(const double* p) { return {_mm512_loadu_pd(p)}; }
  static Pack broadcast(double x) { return {_mm512_set1_pd(x)}; }
  void store(double* p) const { _mm512_storeu_pd(p, v); }
  void fma(Pack a, Pack b) { v = _mm512_fmadd_pd(a.v, b.v, v); }
  friend Pack operator+(Pack a, Pack b) { return {_mm512_add_pd(a.v, b.v)}; }
  friend Pack operator-(Pack a, Pack b) { return {_mm512_sub_pd(a.v, b.v)}; }
  friend Pack operator*(Pack a, Pack b) { return {_mm512_mul_pd(a.v, b.v)}; }
  friend Pack operator/(Pack a, Pack b) { return {_mm512_div_pd(a.v, b.v)}; }
  friend Pack vmax(Pack a, Pack b) { return {_mm512_max_pd(a.v, b.v)}; }
  friend Pack vmin(Pack a, Pack b) { return {_mm512_min_pd(a.v, b.v)}; }
  friend Pack vfmadd(Pack a, Pack b, Pack c) { return {_mm512_fmadd_pd(a.v, b.v, c.v)}; }
  friend Pack vfloor(Pack a) { return {_mm512_roundscale_pd(a.v, _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC)}; }
  // 2^n for integral n held in a double, via the shifted-magic-number trick.
  friend Pack vpow2i(Pack n) {
    const __m512i t = _mm512_castpd_si512(_mm512_add_pd(n.v, _mm512_set1_pd(0x1.8p52)));
    const __m512i e = _mm512_sub_epi64(t, _mm512_castpd_si512(_mm512_set1_pd(0x1.8p52)));
    return {_mm512_castsi512_pd(_mm512_slli_epi64(_mm512_add_epi64(e, _mm512_set1_epi64(1023)), 52))};
  }
};

template <>
struct Pack<float> {
  static constexpr int kWidth = 16;
  __m512 v;
  static Pack zero() { return {_mm512_setzero_ps()}; }
  static Pack load(const float* p) { return {_mm512_loadu_ps(p)}; }
  static Pack broadcast(float x) { return {_mm512_set1_ps(x)}; }
  void store(float* p) const { _mm512_storeu_ps(p, v); }
  void fma(Pack a, Pack b) { v = _mm512_fmadd_ps(a.v, b.v, v); }
  friend Pack operator+(Pack a, Pack b) { return {_mm512_add_ps(a.v, b.v)}; }
  friend Pack operator-(Pack a, Pack b) { return {_mm512_sub_ps(a.v, b.v)}; }
  friend Pack operator*(Pack a, Pack b) { return {_mm512_mul_ps(a.v, b.v)}; }
  friend Pack operator/(Pack a, Pack b) { return {_mm512_div_ps(a.v, b.v)}; }
  friend Pack vmax(Pack a, Pack b) { return {_mm512_max_ps(a.v, b.v)}; }
  friend Pack vmin(Pack a, Pack b) { return {_mm512_min_ps(a.v, b.v)}; }
  friend Pack vfmadd(Pack a, Pack b, Pack c) { return {_mm512_fmadd_ps(a.v, b.v, c.v)}; }
  friend Pack vfloor(Pack a) { return {_mm512_roundscale_ps(a.v, _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC)}; }
  friend Pack vpow2i(Pack n) {
    const __m512i t = _mm512_castps_si512(_mm512_add_ps(n.v, _mm512_set1_ps(0x1.8p23f)));
    const __m512i e = _mm512_sub_epi32(t, _mm512_castps_si512(_mm512_set1_ps(0x1.8p23f)));
    return {_mm512_castsi512_ps(_mm512_slli_epi32(_mm512_add_epi32(e, _mm512_set1_epi32(127)), 23))};
  }
};

#elif defined(RNR_SIMD_AVX2)

template <>
struct Pack<double> {
  static constexpr int kWidth = 4;
  __m256d v;
  static Pack zero() { return {_mm256_setzero_pd()}; }
  static Pack load(const double* p) { return {_mm256_loadu_pd(p)}; }
  static Pack broadcast(double x) { return {_mm256_set1_pd(x)}; }
  void store(double* p) const { _mm256_storeu_pd(p, v); }
  void fma(Pack a, Pack b) { v = _mm256_fmadd_pd(a.v, b.v, v); }
  friend Pack operator+(Pack a, Pack b) { return {_mm256_add_pd(a.v, b.v)}; }
  friend Pack operator-(Pack a, Pack b) { return {_mm256_sub_pd(a.v, b.v)}; }
  friend Pack operator*(Pack a, Pack b) { return {_mm256_mul_pd(a.v, b.v)}; }
  friend Pack operator/(Pack a, Pack b) { return {_mm256_div_pd(a.v, b.v)}; }
  friend Pack vmax(Pack a, Pack b) { return {_mm256_max_pd(a.v, b.v)}; }
  friend Pack vmin(Pack a, Pack b) { return {_mm256_min_pd(a.v, b.v)}; }
  friend Pack vfmadd(Pack a, Pack b, Pack c) { return {_mm256_fmadd_pd(a.v, b.v, c.v)}; }
  friend Pack vfloor(Pack a) { return {_mm256_floor_pd(a.v)}; }
  friend Pack vpow2i(Pack n) {
    const __m256i t = _mm256_castpd_si256(_mm256_add_pd(n.v, _mm256_set1_pd(0x1.8p52)));
    const __m256i e = _mm256_sub_epi64(t, _mm256_castpd_si256(_mm256_set1_pd(0x1.8p52)));
    return {_mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(e, _mm256_set1_epi64x(1023)), 52))};
  }
};

template <>
struct Pack<float> {
  static constexpr int kWidth = 8;
  __m256 v;
  static Pack zero() { return {_mm256_setzero_ps()}; }
  static Pack load(const float* p) { return {_mm256_loadu_ps(p)}; }
  static Pack broadcast(float x) { return {_mm256_set1_ps(x)}; }
  void store(float* p) const { _mm256_storeu_ps(p, v); }
  void fma(Pack a, Pack b) { v = _mm256_fmadd_ps(a.v, b.v, v); }
  friend Pack operator+(Pack a, Pack b) { return {_mm256_add_ps(a.v, b.v)}; }
  friend Pack operator-(Pack a, Pack b) { return {_mm256_sub_ps(a.v, b.v)}; }
  friend Pack operator*(Pack a, Pack b) { return {_mm256_mul_ps(a.v, b.v)}; }
  friend Pack operator/(Pack a, Pack b) { return {_mm256_div_ps(a.v, b.v)}; }
  friend Pack vmax(Pack a, Pack b) { return {_mm256_max_ps(a.v, b.v)}; }
  friend Pack vmin(Pack a, Pack b) { return {_mm256_min_ps(a.v, b.v)}; }
  friend Pack vfmadd(Pack a, Pack b, Pack c) { return {_mm256_fmadd_ps(a.v, b.v, c.v)}; }
  friend Pack vfloor(Pack a) { return {_mm256_floor_ps(a.v)}; }
  friend Pack vpow2i(Pack n) {
    const __m256i t = _mm256_castps_si256(_mm256_add_ps(n.v, _mm256_set1_ps(0x1.8p23f)));
    const __m256i e = _mm256_sub_epi32(t, _mm256_castps_si256(_mm256_set1_ps(0x1.8p23f)));
    return {_mm256_castsi256_ps(_mm256_slli_epi32(_mm256_add_epi32(e, _mm256_set1_epi32(127)), 23))};
  }
};

#else

template <class T>
struct Pack {
  static constexpr int kWidth = 8;
  T v[kWidth];
  static Pack zero() { return {}; }
  static Pack load(const T* p) {
    Pack r;
    for (int i = 0; i < kWidth; ++i) r.v[i] = p[i];
    return r;
  }
  static Pack broadcast(T x) {
    Pack r;
    for (auto& e : r.v) e = x;
    return r;
  }
  void store(T* p) const {
    for (int i = 0; i < kWidth; ++i) p[i] = v[i];
  }
  void fma(Pack a, Pack b) {
    for (int i = 0; i < kWidth; ++i) v[i] = std::fma(a.v[i], b.v[i], v[i]);
  }
  template <class F>
  static Pack map(Pack a, Pack b, F f) {
    Pack r;
    for (int i = 0; i < kWidth; ++i) r.v[i] = f(a.v[i], b.v[i]);
    return r;
  }
  friend Pack operator+(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x + y; }); }
  friend Pack operator-(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x - y; }); }
  friend Pack operator*(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x * y; }); }
  friend Pack operator/(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x / y; }); }
  friend Pack vmax(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x > y ? x : y; }); }
  friend Pack vmin(Pack a, Pack b) { return map(a, b, [](T x, T y) { return x < y ? x : y; }); }
  friend Pack vfmadd(Pack a, Pack b, Pack c) {
    c.fma(a, b);
    return c;
  }
  friend Pack vfloor(Pack a) { return map(a, a, [](T x, T) { return std::floor(x); }); }
  friend Pack vpow2i(Pack n) { return map(n, n, [](T x, T) { return pow2i_scalar(x); }); }
};

#endif

}  // namespace rnr::detail

namespace rnr::detail {

template <class V>
struct ScalarOf {
  using type = V;
};
template <class T>
struct ScalarOf<Pack<T>> {
  using type = T;
};

template <class V>
V splat(typename ScalarOf<V>::type c) {
  if constexpr (std::is_same_v<V, typename ScalarOf<V>::type>)
    return c;
  else
    return V::broadcast(c);
}

}  // namespace rnr::detail
