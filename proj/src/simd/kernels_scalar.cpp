#include <algorithm>
#include <cmath>

#include "impactscan/simd/kernels.hpp"

namespace impactscan::simd {

namespace {

double sum(const float* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

SumSq sum_sumsq(const float* x, std::size_t n) {
  SumSq r;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    r.sum += v;
    r.sumsq += v * v;
  }
  return r;
}

double sq_diff_sum(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
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
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(x + k, 0, w - 1);
        acc = std::fma(taps[k + r], row[xx], acc);
      }
      dst[x] = acc;
    }
  }
}

void filter_cols(const float* in, float* out, std::size_t width, std::size_t height, const float* taps,
                 std::size_t radius) {
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    float* dst = out + y * width;
    for (std::size_t x = 0; x < width; ++x) {
      float acc = 0.0f;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(y + k, 0, h - 1);
        acc = std::fma(taps[k + r], in[yy * width + x], acc);
      }
      dst[x] = acc;
    }
  }
}

void bin_index(const float* x, std::uint16_t* out, std::size_t n, std::uint32_t bins) {
  const float scale = static_cast<float>(bins);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = static_cast<std::uint32_t>(std::clamp(x[i], 0.0f, 1.0f) * scale);
    out[i] = static_cast<std::uint16_t>(std::min(b, bins - 1));
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", sum, sum_sumsq, sq_diff_sum, filter_rows, filter_cols, bin_index};
  return table;
}

}  // namespace impactscan::simd
