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
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnr/detail/simd.hpp"
#include "rnr/flops.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

struct AttentionOptions {
  Index heads = 1;
  /// Multiply scores by 1/sqrt(d_head) before the softmax.
  bool scale = true;
};

namespace detail {

inline Index round_up(Index x, Index m) { return (x + m - 1) / m * m; }

#if defined(RNR_SIMD_AVX512)
inline constexpr int kTileRows = 8;
#else
inline constexpr int kTileRows = 4;
#endif

// s[r][j] = sum_p q[r][p] * kt[p][j] for R query rows and j < width, p
// ascending. width is a multiple of NV pack widths.
template <class T, int R, int NV>
void score_block(const T* q, Index dh, const T* kt, Index ldk, Index width, T* s, Index lds) {
  using P = Pack<T>;
  constexpr int W = P::kWidth;
  for (Index j0 = 0; j0 < width; j0 += NV * W) {
    P acc[R][NV];
    for (auto& row : acc)
      for (auto& a : row) a = P::zero();
    for (Index p = 0; p < dh; ++p) {
      P kr[NV];
      for (int c = 0; c < NV; ++c) kr[c] = P::load(kt + p * ldk + j0 + c * W);
      for (int r = 0; r < R; ++r) {
        const P b = P::broadcast(q[r * dh + p]);
        for (int c = 0; c < NV; ++c) acc[r][c].fma(b, kr[c]);
      }
    }
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < NV; ++c) acc[r][c].store(s + r * lds + j0 + c * W);
  }
}

// out[r][c] += sum_j s[r][j] * v[j][c] for j < count, j ascending.
template <class T, int R, int NV>
void value_block(const T* s, Index lds, Index count, const T* v, Index ldv, T* out) {
  using P = Pack<T>;
  constexpr int W = P::kWidth;
  for (Index c0 = 0; c0 < ldv; c0 += NV * W) {
    P acc[R][NV];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < NV; ++c) acc[r][c] = P::load(out + r * ldv + c0 + c * W);
    for (Index j = 0; j < count; ++j) {
      P vr[NV];
      for (int c = 0; c < NV; ++c) vr[c] = P::load(v + j * ldv + c0 + c * W);
      for (int r = 0; r < R; ++r) {
        const P b = P::broadcast(s[r * lds + j]);
        for (int c = 0; c < NV; ++c) acc[r][c].fma(b, vr[c]);
      }
    }
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < NV; ++c) acc[r][c].store(out + r * ldv + c0 + c * W);
  }
}

template <class T, int R>
void value_dispatch(const T* s, Index lds, Index count, const T* v, Index ldv, T* out) {
  if (ldv % (2 * Pack<T>::kWidth) == 0)
    value_block<T, R, 2>(s, lds, count, v, ldv, out);
  else
    value_block<T, R, 1>(s, lds, count, v, ldv, out);
}

// softmax(Q_h K_h^T * scale) V_h for one head, written into out columns
// [h*dh, (h+1)*dh). Keys are consumed in blocks of kKeyBlock with a running
// row maximum and normalizer, so working buffers stay cache resident.
template <class T>
void attention_head(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, Index head, Index dh,
                    T scale, Matrix<T>& out) {
  constexpr int R = kTileRows;
  constexpr Index JW = 2 * Pack<T>::kWidth;
  constexpr Index KB = 256;
  constexpr Index QB = 8 * R;
  static_assert(KB % JW == 0);
  const Index mq = q.rows(), mkv = k.rows();
  const Index off = head * dh;
  const Index nkb = (mkv + KB - 1) / KB;
  const Index ldv = round_up(dh, Pack<T>::kWidth);
  const Index mq_pad = round_up(mq, R);

  std::vector<T> qp(mq_pad * dh, T{0});
  for (Index i = 0; i < mq; ++i)
    for (Index p = 0; p < dh; ++p) qp[i * dh + p] = q(i, off + p);
  // Key tiles: tile b holds kt[p][jj] = K[b*KB + jj][p] as a dh x KB block.
  std::vector<T> kt(nkb * dh * KB, T{0});
  for (Index j = 0; j < mkv; ++j) {
    T* tile = kt.data() + (j / KB) * dh * KB;
    for (Index p = 0; p < dh; ++p) tile[p * KB + j % KB] = k(j, off + p);
  }
  std::vector<T> vp(nkb * KB * ldv, T{0});
  for (Index j = 0; j < mkv; ++j)
    for (Index p = 0; p < dh; ++p) vp[j * ldv + p] = v(j, off + p);

  std::vector<T> s(QB * KB), o(QB * ldv), rmax(QB), rsum(QB);
  for (Index i0 = 0; i0 < mq_pad; i0 += QB) {
    const Index rows = std::min(QB, mq_pad - i0);
    std::fill(o.begin(), o.end(), T{0});
    std::fill(rmax.begin(), rmax.end(), -std::numeric_limits<T>::infinity());
    std::fill(rsum.begin(), rsum.end(), T{0});
    for (Index b = 0; b < nkb; ++b) {
      const Index kw = std::min(KB, mkv - b * KB);
      const Index kwp = round_up(kw, JW);
      for (Index r0 = 0; r0 < rows; r0 += R)
        score_block<T, R, 2>(qp.data() + (i0 + r0) * dh, dh, kt.data() + b * dh * KB, KB, kwp,
                             s.data() + r0 * KB, KB);
      for (Index r = 0; r < rows; ++r) {
        T* srow = s.data() + r * KB;
        const T mx = vmax(max_reduce(srow, kw), rmax[r]);
        exp_shift_scale(srow, kw, mx, scale);
        const T part = sum_reduce(srow, kw);
        if (rmax[r] != mx) {
          const T corr = rsum[r] == T{0} ? T{0} : exp_fast((rmax[r] - mx) * scale);
          rsum[r] *= corr;
          for (Index p = 0; p < ldv; ++p) o[r * ldv + p] *= corr;
          rmax[r] = mx;
        }
        rsum[r] += part;
      }
      for (Index r0 = 0; r0 < rows; r0 += R)
        value_dispatch<T, R>(s.data() + r0 * KB, KB, kw, vp.data() + b * KB * ldv, ldv, o.data() + r0 * ldv);
    }
    for (Index r = 0; r < rows && i0 + r < mq; ++r)
      for (Index p = 0; p < dh; ++p) out(i0 + r, off + p) = o[r * ldv + p] / rsum[r];
  }
}

}  // namespace detail

/// Multi-head softmax(Q K^T) V. Q is m_q x d, K and V are m_kv x d; heads
/// split the feature columns into contiguous equal groups.
template <class T>
Matrix<T> attn_plain(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, const AttentionOptions& opt = {},
                     CostBreakdown* cost = nullptr) {
  if (q.cols() != k.cols() || k.cols() != v.cols())
    throw std::invalid_argument("attn_plain: Q, K, V feature dims differ");
  if (k.rows() != v.rows()) throw std::invalid_argument("attn_plain: K and V row counts differ");
  if (k.rows() == 0) throw std::invalid_argument("attn_plain: empty key set");
  if (opt.heads == 0 || q.cols() % opt.heads != 0)
    throw std::invalid_argument("attn_plain: feature dim " + std::to_string(q.cols()) +
                                " not divisible by heads " + std::to_string(opt.heads));
  const Index d = q.cols(), dh = d / opt.heads;
  const T scale = opt.scale ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))) : T{1};
  Matrix<T> out(q.rows(), d);
  for (Index h = 0; h < opt.heads; ++h) detail::attention_head(q, k, v, h, dh, scale, out);
  if (cost) {
    const std::uint64_t mq = q.rows(), mkv = k.rows();
    cost->qk_matmul += mq * mkv * d;
    cost->av_matmul += mq * mkv * d;
    cost->softmax += kSoftmaxCost * mq * mkv * opt.heads;
  }
  return out;
}

}  // namespace rnr
