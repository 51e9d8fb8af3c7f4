#pragma once

// Data-parallel inner loops shared by the forward model, the solvers and the
// autodiff convolutions. Each kernel has a scalar reference implementation
// and vectorized variants (AVX2+FMA on x86-64, NEON on AArch64). The variant
// is picked once at startup from CPU features; CSOU_SIMD=scalar|avx2|neon
// overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace csou::simd {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  const char* name;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = sign(v[i]) * max(0, |v[i]| - theta)
  void (*soft_threshold)(const double* v, double theta, double* out,
                         std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  // Each C entry accumulates over k in ascending order.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

const KernelTable& active();
// Forces a variant; returns false (and keeps the current one) if unavailable.
bool select(Isa isa);
Isa parse_isa(std::string_view name);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline void soft_threshold(std::span<const double> v, double theta,
                           std::span<double> out) {
  active().soft_threshold(v.data(), theta, out.data(), v.size());
}
inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc);
}

// Restores the previously active variant on scope exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;
  bool ok() const { return ok_; }

 private:
  Isa previous_;
  bool ok_;
};

}  // namespace csou::simd
