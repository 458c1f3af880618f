#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference and, on
// x86-64, an AVX2+FMA variant chosen at runtime. Set IMPACTSCAN_KERNELS=scalar
// to force the reference path.

#include <cstddef>
#include <cstdint>

namespace impactscan::simd {

struct SumSq {
  double sum = 0.0;
  double sumsq = 0.0;
};

struct KernelTable {
  const char* name;

  // Sum of n floats, accumulated in double.
  double (*sum)(const float* x, std::size_t n);
  SumSq (*sum_sumsq)(const float* x, std::size_t n);
  // sum_i (a_i - b_i)^2, accumulated in double.
  double (*sq_diff_sum)(const float* a, const float* b, std::size_t n);

  // Separable filter passes with clamp-to-edge borders. taps has 2*radius+1
  // entries. Each output is accumulated tap by tap with fused multiply-add in
  // tap order, so all variants agree bit for bit.
  void (*filter_rows)(const float* in, float* out, std::size_t width, std::size_t height, const float* taps,
                      std::size_t radius);
  void (*filter_cols)(const float* in, float* out, std::size_t width, std::size_t height, const float* taps,
                      std::size_t radius);

  // out_i = min(bins - 1, floor(clamp(x_i, 0, 1) * bins)). bins <= 65536.
  void (*bin_index)(const float* x, std::uint16_t* out, std::size_t n, std::uint32_t bins);
};

const KernelTable& scalar_kernels();
// nullptr when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();
// Best available variant, honoring IMPACTSCAN_KERNELS.
const KernelTable& active_kernels();

}  // namespace impactscan::simd
