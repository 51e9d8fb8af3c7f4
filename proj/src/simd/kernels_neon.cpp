#include "csou/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

#include <cmath>

namespace csou::simd {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void soft_threshold_neon(const double* v, double theta, double* out,
                         std::size_t n) {
  const float64x2_t vt = vdupq_n_f64(theta);
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t x = vld1q_f64(v + i);
    const float64x2_t mag = vsubq_f64(vabsq_f64(x), vt);
    const uint64x2_t live = vcgtq_f64(mag, zero);
    const float64x2_t signed_mag =
        vbslq_f64(vcltq_f64(x, zero), vnegq_f64(mag), mag);
    vst1q_f64(out + i, vbslq_f64(live, signed_mag, zero));
  }
  for (; i < n; ++i) {
    const double x = v[i];
    const double mag = (x < 0 ? -x : x) - theta;
    out[i] = mag > 0.0 ? (x < 0 ? -mag : mag) : 0.0;
  }
}

double squared_distance_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    acc = vfmaq_f64(acc, d, d);
  }
  double total = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return total;
}

void gemm_neon(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t c0 = vld1q_f64(ci + j);
      float64x2_t c1 = vld1q_f64(ci + j + 2);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(a[i * lda + p]);
        c0 = vfmaq_f64(c0, av, vld1q_f64(b + p * ldb + j));
        c1 = vfmaq_f64(c1, av, vld1q_f64(b + p * ldb + j + 2));
      }
      vst1q_f64(ci + j, c0);
      vst1q_f64(ci + j + 2, c1);
    }
    for (; j < n; ++j) {
      double acc = ci[j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
      ci[j] = acc;
    }
  }
}

}  // namespace

const KernelTable* neon_kernels() {
  static const KernelTable table{Isa::kNeon,          "neon",
                                 &dot_neon,           &axpy_neon,
                                 &soft_threshold_neon, &squared_distance_neon,
                                 &gemm_neon};
  return &table;
}

}  // namespace csou::simd

#else

namespace csou::simd {
const KernelTable* neon_kernels() { return nullptr; }
}  // namespace csou::simd

#endif
