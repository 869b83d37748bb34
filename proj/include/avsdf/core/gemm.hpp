#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace avsdf::num {

// Dense f32 kernels with a fixed floating-point summation order.
//
// Bit-exactness contract: for every output element of gemm_nn, partial products
// are accumulated strictly in ascending k order, independent of M, of strip
// boundaries, and of thread count (threads split output rows, never the k loop).
// Evaluating a subset of rows therefore reproduces exactly the bits of the
// corresponding rows of a larger batch, which is what makes batched and serial
// model queries identical.

inline constexpr int kGemmStrip = 256;

// C[M,N] = A[M,K] * B[K,N]  (or += when accumulate)
inline void gemm_nn(const float* __restrict a, const float* __restrict b,
                    float* __restrict c, int64_t m, int64_t k, int64_t n,
                    bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m >= 64 && omp_get_max_threads() > 1)
#endif
  for (int64_t i = 0; i < m; ++i) {
    const float* __restrict ai = a + i * k;
    float* __restrict ci = c + i * n;
    for (int64_t j0 = 0; j0 < n; j0 += kGemmStrip) {
      const int64_t jn = (n - j0 < kGemmStrip) ? (n - j0) : kGemmStrip;
      float acc[kGemmStrip];
      if (accumulate)
        for (int64_t j = 0; j < jn; ++j) acc[j] = ci[j0 + j];
      else
        for (int64_t j = 0; j < jn; ++j) acc[j] = 0.0f;
      for (int64_t kk = 0; kk < k; ++kk) {
        const float av = ai[kk];
        const float* __restrict bk = b + kk * n + j0;
        for (int64_t j = 0; j < jn; ++j) acc[j] += av * bk[j];
      }
      for (int64_t j = 0; j < jn; ++j) ci[j0 + j] = acc[j];
    }
  }
}

// dB[K,N] += A[M,K]^T * G[M,N], with dB kept resident (weight-gradient shape).
// Per output element the m loop ascends; threads split the k rows.
inline void gemm_at_b_acc(const float* __restrict a, const float* __restrict g,
                          float* __restrict db, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel if (k >= 8 && omp_get_max_threads() > 1)
#endif
  {
    int64_t k0 = 0, k1 = k;
#ifdef _OPENMP
    const int tn = omp_get_num_threads(), ti = omp_get_thread_num();
    k0 = k * ti / tn;
    k1 = k * (ti + 1) / tn;
#endif
    for (int64_t mm = 0; mm < m; ++mm) {
      const float* __restrict am = a + mm * k;
      const float* __restrict gm = g + mm * n;
      for (int64_t kk = k0; kk < k1; ++kk) {
        const float av = am[kk];
        if (av == 0.0f) continue;
        float* __restrict dbk = db + kk * n;
        for (int64_t j = 0; j < n; ++j) dbk[j] += av * gm[j];
      }
    }
  }
}

inline void transpose_copy(const float* __restrict src, float* __restrict dst,
                           int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace avsdf::num
