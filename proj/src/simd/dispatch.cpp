#include <atomic>
#include <cstdlib>
#include <string>

#include "csou/errors.hpp"
#include "csou/simd/kernels.hpp"

namespace csou::simd {
namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &scalar_kernels();
    case Isa::kAvx2:
      return avx2_kernels();
    case Isa::kNeon:
      return neon_kernels();
  }
  return nullptr;
}

const KernelTable* detect() {
  if (const char* forced = std::getenv("CSOU_SIMD")) {
    const std::string_view want(forced);
    for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
      const KernelTable* t = table_for(isa);
      if (t != nullptr && want == t->name) return t;
    }
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  if (const KernelTable* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const KernelTable* t = avx2_kernels()) out.push_back(t);
  if (const KernelTable* t = neon_kernels()) out.push_back(t);
  return out;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Isa isa) {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) return false;
  current().store(t, std::memory_order_release);
  return true;
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  if (name == "neon") return Isa::kNeon;
  throw InvalidParameter("unknown SIMD variant '" + std::string(name) + "'");
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active().isa), ok_(select(isa)) {}

ScopedIsa::~ScopedIsa() { select(previous_); }

}  // namespace csou::simd
