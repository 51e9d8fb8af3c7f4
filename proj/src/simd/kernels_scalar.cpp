#include <cmath>

#include "csou/simd/kernels.hpp"

namespace csou::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void soft_threshold_scalar(const double* v, double theta, double* out,
                           std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double mag = std::fabs(v[i]) - theta;
    out[i] = mag > 0.0 ? std::copysign(mag, v[i]) : 0.0;
  }
}

double squared_distance_scalar(const double* a, const double* b,
                               std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::kScalar,        "scalar",
                                 &dot_scalar,         &axpy_scalar,
                                 &soft_threshold_scalar,
                                 &squared_distance_scalar,
                                 &gemm_scalar};
  return table;
}

}  // namespace csou::simd
