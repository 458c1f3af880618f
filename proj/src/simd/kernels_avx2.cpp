#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "impactscan/simd/kernels.hpp"

namespace impactscan::simd {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double sum(const float* x, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    a0 = _mm256_add_pd(a0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    a1 = _mm256_add_pd(a1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  double s = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) s += x[i];
  return s;
}

SumSq sum_sumsq(const float* x, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d q0 = _mm256_setzero_pd(), q1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    s0 = _mm256_add_pd(s0, lo);
    s1 = _mm256_add_pd(s1, hi);
    q0 = _mm256_fmadd_pd(lo, lo, q0);
    q1 = _mm256_fmadd_pd(hi, hi, q1);
  }
  SumSq r{hsum(_mm256_add_pd(s0, s1)), hsum(_mm256_add_pd(q0, q1))};
  for (; i < n; ++i) {
    const double v = x[i];
    r.sum += v;
    r.sumsq += v * v;
  }
  return r;
}

double sq_diff_sum(const float* a, const float* b, std::size_t n) {
  __m256d q0 = _mm256_setzero_pd(), q1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    const __m256d d0 = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)),
                                     _mm256_cvtps_pd(_mm256_castps256_ps128(vb)));
    const __m256d d1 = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)),
                                     _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1)));
    q0 = _mm256_fmadd_pd(d0, d0, q0);
    q1 = _mm256_fmadd_pd(d1, d1, q1);
  }
  double s = hsum(_mm256_add_pd(q0, q1));
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

void filter_rows(const float* in, float* out, std::size_t width, std::size_t height, const float* taps,
                 std::size_t radius) {
  const auto w = static_cast<std::ptrdiff_t>(width);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t y = 0; y < height; ++y) {
    const float* row = in + y * width;
    float* dst = out + y * width;
    auto scalar_at = [&](std::ptrdiff_t x) {
      float acc = 0.0f;
      for (std::ptrdiff_t k = -r; k <= r; ++k)
        acc = std::fma(taps[k + r], row[std::clamp<std::ptrdiff_t>(x + k, 0, w - 1)], acc);
      dst[x] = acc;
    };
    std::ptrdiff_t x = 0;
    for (; x < std::min(r, w); ++x) scalar_at(x);
    // Interior: every tap reads in bounds.
    for (; x + 8 <= w - r; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (std::ptrdiff_t k = -r; k <= r; ++k)
        acc = _mm256_fmadd_ps(_mm256_set1_ps(taps[k + r]), _mm256_loadu_ps(row + x + k), acc);
      _mm256_storeu_ps(dst + x, acc);
    }
    for (; x < w; ++x) scalar_at(x);
  }
}

void filter_cols(const float* in, float* out, std::size_t width, std::size_t height, const float* taps,
                 std::size_t radius) {
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    float* dst = out + y * width;
    std::size_t x = 0;
    for (; x + 8 <= width; x += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(y + k, 0, h - 1);
        acc = _mm256_fmadd_ps(_mm256_set1_ps(taps[k + r]), _mm256_loadu_ps(in + yy * width + x), acc);
      }
      _mm256_storeu_ps(dst + x, acc);
    }
    for (; x < width; ++x) {
      float acc = 0.0f;
      for (std::ptrdiff_t k = -r; k <= r; ++k)
        acc = std::fma(taps[k + r], in[std::clamp<std::ptrdiff_t>(y + k, 0, h - 1) * width + x], acc);
      dst[x] = acc;
    }
  }
}

void bin_index(const float* x, std::uint16_t* out, std::size_t n, std::uint32_t bins) {
  const float scale = static_cast<float>(bins);
  const __m256 zero = _mm256_setzero_ps(), one = _mm256_set1_ps(1.0f), vs = _mm256_set1_ps(scale);
  const __m256i top = _mm256_set1_epi32(static_cast<int>(bins - 1));
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m256 a = _mm256_loadu_ps(x + i), b = _mm256_loadu_ps(x + i + 8);
    a = _mm256_mul_ps(_mm256_min_ps(_mm256_max_ps(a, zero), one), vs);
    b = _mm256_mul_ps(_mm256_min_ps(_mm256_max_ps(b, zero), one), vs);
    const __m256i ia = _mm256_min_epi32(_mm256_cvttps_epi32(a), top);
    const __m256i ib = _mm256_min_epi32(_mm256_cvttps_epi32(b), top);
    const __m256i packed = _mm256_permute4x64_epi64(_mm256_packus_epi32(ia, ib), 0xd8);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + i), packed);
  }
  for (; i < n; ++i) {
    const auto v = static_cast<std::uint32_t>(std::clamp(x[i], 0.0f, 1.0f) * scale);
    out[i] = static_cast<std::uint16_t>(std::min(v, bins - 1));
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{"avx2", sum, sum_sumsq, sq_diff_sum, filter_rows, filter_cols, bin_index};
  return table;
}

}  // namespace impactscan::simd
