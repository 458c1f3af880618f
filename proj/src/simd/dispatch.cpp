#include <cstdlib>
#include <string_view>

#include "impactscan/simd/kernels.hpp"

namespace impactscan::simd {

#if defined(IMPACTSCAN_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(IMPACTSCAN_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable* chosen = [] {
    const char* env = std::getenv("IMPACTSCAN_KERNELS");
    if (env && std::string_view(env) == "scalar") return &scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return t;
    return &scalar_kernels();
  }();
  return *chosen;
}

}  // namespace impactscan::simd
