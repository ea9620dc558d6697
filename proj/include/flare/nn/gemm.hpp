#pragma once

#include <cstdint>

namespace flare::nn {

/// C [m,n] (+)= A [m,k] * B [k,n]. i-k-j loop order keeps the inner loop
/// contiguous in both B and C so the compiler can vectorize it.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  if (!accumulate)
    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] = S{0};
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * k;
    S* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C [m,n] (+)= A [m,k] * B^T, with B given as [n,k].
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * k;
    S* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b + static_cast<int64_t>(j) * k;
      S acc = accumulate ? crow[j] : S{0};
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

/// C [m,n] (+)= A^T * B, with A given as [k,m].
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  if (!accumulate)
    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] = S{0};
  for (int p = 0; p < k; ++p) {
    const S* arow = a + static_cast<int64_t>(p) * m;
    const S* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Unroll conv patches of one [ch,h,w] image into col [ch*kh*kw, oh*ow]
/// (valid padding), so convolution becomes a single GEMM.
template <typename S>
void im2col(const S* img, int ch, int h, int w, int kh, int kw, int stride, int oh,
            int ow, S* col) {
  int row = 0;
  for (int c = 0; c < ch; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++row) {
        S* dst = col + static_cast<int64_t>(row) * oh * ow;
        const S* src = img + static_cast<int64_t>(c) * h * w;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki;
          for (int oj = 0; oj < ow; ++oj)
            dst[oi * ow + oj] = src[static_cast<int64_t>(ii) * w + oj * stride + kj];
        }
      }
}

/// Scatter-add the inverse of im2col: accumulates col back into the image.
template <typename S>
void col2im(const S* col, int ch, int h, int w, int kh, int kw, int stride, int oh,
            int ow, S* img) {
  int row = 0;
  for (int c = 0; c < ch; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const S* src = col + static_cast<int64_t>(row) * oh * ow;
        S* dst = img + static_cast<int64_t>(c) * h * w;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki;
          for (int oj = 0; oj < ow; ++oj)
            dst[static_cast<int64_t>(ii) * w + oj * stride + kj] += src[oi * ow + oj];
        }
      }
}

}  // namespace flare::nn
