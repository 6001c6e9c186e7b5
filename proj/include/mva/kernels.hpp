#pragma once

#include <cstdint>

#include "mva/array.hpp"

// Dense kernels behind the taped ops. Plain loops in fixed order: results
// are reproducible for a given build regardless of thread count (callers
// parallelize over disjoint outputs only).

namespace mva::kern {

// C[m x n] += A[m x k] * B[k x n], all row-major.
template <class S>
void mm_nn(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<int64_t>(i) * k;
    S* ci = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, with B stored [n x k] row-major.
template <class S>
void mm_nt(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<int64_t>(i) * k;
    S* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* bj = b + static_cast<int64_t>(j) * k;
      S acc = S(0);
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k x n] += A^T * B, with A stored [m x k] and B stored [m x n] row-major.
template <class S>
void mm_tn(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
  for (int r = 0; r < m; ++r) {
    const S* ar = a + static_cast<int64_t>(r) * k;
    const S* br = b + static_cast<int64_t>(r) * n;
    for (int i = 0; i < k; ++i) {
      const S av = ar[i];
      if (av == S(0)) continue;
      S* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col: x[C x H x W] -> cols[(C*kh*kw) x (Ho*Wo)], zero-padded borders.
template <class S>
void im2col(const S* x, int C, int H, int W, int kh, int kw, int stride, int pad_h, int pad_w, S* cols) {
  const int Ho = conv_out_extent(H, kh, stride, pad_h);
  const int Wo = conv_out_extent(W, kw, stride, pad_w);
  const int64_t patch = static_cast<int64_t>(Ho) * Wo;
  int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    const S* xc = x + static_cast<int64_t>(c) * H * W;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++row) {
        S* dst = cols + row * patch;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride - pad_h + di;
          if (ii < 0 || ii >= H) {
            for (int oj = 0; oj < Wo; ++oj) *dst++ = S(0);
            continue;
          }
          const S* src = xc + static_cast<int64_t>(ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride - pad_w + dj;
            *dst++ = (jj < 0 || jj >= W) ? S(0) : src[jj];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add cols back into x[C x H x W].
template <class S>
void col2im(const S* cols, int C, int H, int W, int kh, int kw, int stride, int pad_h, int pad_w, S* x) {
  const int Ho = conv_out_extent(H, kh, stride, pad_h);
  const int Wo = conv_out_extent(W, kw, stride, pad_w);
  const int64_t patch = static_cast<int64_t>(Ho) * Wo;
  int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    S* xc = x + static_cast<int64_t>(c) * H * W;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++row) {
        const S* src = cols + row * patch;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride - pad_h + di;
          if (ii < 0 || ii >= H) {
            src += Wo;
            continue;
          }
          S* dst = xc + static_cast<int64_t>(ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride - pad_w + dj;
            if (jj >= 0 && jj < W) dst[jj] += src[oj];
          }
          src += Wo;
        }
      }
    }
  }
}

}  // namespace mva::kern
