// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "csou/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <cmath>

namespace csou::simd {
namespace {

inline double horizontal_sum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8),
                           _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12),
                           _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = horizontal_sum(
      _mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4),
                                                _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void soft_threshold_avx2(const double* v, double theta, double* out,
                         std::size_t n) {
  const __m256d sign_bit = _mm256_set1_pd(-0.0);
  const __m256d vt = _mm256_set1_pd(theta);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(v + i);
    const __m256d mag = _mm256_sub_pd(_mm256_andnot_pd(sign_bit, x), vt);
    const __m256d live = _mm256_cmp_pd(mag, zero, _CMP_GT_OQ);
    // Dead-zone entries become +0.0, matching the scalar path bit for bit.
    const __m256d sign = _mm256_and_pd(_mm256_and_pd(x, sign_bit), live);
    _mm256_storeu_pd(out + i, _mm256_or_pd(_mm256_and_pd(mag, live), sign));
  }
  for (; i < n; ++i) {
    const double x = v[i];
    const double mag = (x < 0 ? -x : x) - theta;
    out[i] = mag > 0.0 ? (x < 0 ? -mag : mag) : 0.0;
  }
}

double squared_distance_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 =
        _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
  }
  double acc = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// R rows by 8 columns of C held in registers across the whole k loop.
template <int R>
inline void gemm_block8(std::size_t k, const double* a, std::size_t lda,
                        const double* b, std::size_t ldb, double* c,
                        std::size_t ldc) {
  __m256d lo[R];
  __m256d hi[R];
  for (int r = 0; r < R; ++r) {
    lo[r] = _mm256_loadu_pd(c + r * ldc);
    hi[r] = _mm256_loadu_pd(c + r * ldc + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      lo[r] = _mm256_fmadd_pd(av, b0, lo[r]);
      hi[r] = _mm256_fmadd_pd(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * ldc, lo[r]);
    _mm256_storeu_pd(c + r * ldc + 4, hi[r]);
  }
}

template <int R>
inline void gemm_block4(std::size_t k, const double* a, std::size_t lda,
                        const double* b, std::size_t ldb, double* c,
                        std::size_t ldc) {
  __m256d acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * lda + p), b0, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

template <int R>
void gemm_rows(std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) gemm_block8<R>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j + 4 <= n; j += 4) gemm_block4<R>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double acc = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) {
        acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
      }
      c[r * ldc + j] = acc;
    }
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) gemm_rows<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{Isa::kAvx2,          "avx2",
                                 &dot_avx2,           &axpy_avx2,
                                 &soft_threshold_avx2, &squared_distance_avx2,
                                 &gemm_avx2};
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &table : nullptr;
}

}  // namespace csou::simd

#else

namespace csou::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace csou::simd

#endif
