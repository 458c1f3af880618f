#include "impactscan/features.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace impactscan {

namespace {

// Column span [begin, end) of pixel centers within `radius` of the window center on row r.
std::pair<int, int> chord(int size, int r, double radius) {
  const double c = (size - 1) / 2.0;
  const double dy = r - c;
  const double h2 = radius * radius - dy * dy;
  if (h2 < 0.0) return {0, 0};
  const double h = std::sqrt(h2);
  const int begin = std::max(0, static_cast<int>(std::ceil(c - h)));
  const int end = std::min(size, static_cast<int>(std::floor(c + h)) + 1);
  return {begin, std::max(begin, end)};
}

double percentile_from_histogram(const std::vector<std::uint32_t>& hist, std::size_t n, double q) {
  const double target = q * static_cast<double>(n);
  double cum = 0.0;
  const double width = 1.0 / static_cast<double>(hist.size());
  for (std::size_t b = 0; b < hist.size(); ++b) {
    const double next = cum + hist[b];
    if (next >= target && hist[b] > 0) return (b + (target - cum) / hist[b]) * width;
    cum = next;
  }
  return 1.0;
}

}  // namespace

FeatureVector window_features(const WindowView& w, const simd::KernelTable& k) {
  const int s = w.size();
  const double n = static_cast<double>(s) * s;
  const double disc_r = s / 5.0;
  const double outer_r = s / 2.0;

  double total = 0.0, total_sq = 0.0, disc = 0.0, outer = 0.0, grad = 0.0;
  std::size_t disc_n = 0, outer_n = 0;
  constexpr std::size_t kBins = 1024;
  // Four interleaved sub-histograms; neighbouring pixels often share a bin.
  std::vector<std::uint32_t> sub(4 * kBins, 0);
  std::vector<std::uint16_t> bins(static_cast<std::size_t>(s));

  for (int r = 0; r < s; ++r) {
    const float* row = w.row(r).data();
    const auto ss = k.sum_sumsq(row, s);
    total += ss.sum;
    total_sq += ss.sumsq;
    const auto [d0, d1] = chord(s, r, disc_r);
    const auto [o0, o1] = chord(s, r, outer_r);
    disc += k.sum(row + d0, d1 - d0);
    outer += k.sum(row + o0, o1 - o0);
    disc_n += d1 - d0;
    outer_n += o1 - o0;
    if (s > 1) grad += k.sq_diff_sum(row + 1, row, s - 1);
    if (r + 1 < s) grad += k.sq_diff_sum(w.row(r + 1).data(), row, s);
    k.bin_index(row, bins.data(), bins.size(), kBins);
    int c = 0;
    for (; c + 4 <= s; c += 4) {
      ++sub[bins[c]];
      ++sub[kBins + bins[c + 1]];
      ++sub[2 * kBins + bins[c + 2]];
      ++sub[3 * kBins + bins[c + 3]];
    }
    for (; c < s; ++c) ++sub[(c & 3) * kBins + bins[c]];
  }
  std::vector<std::uint32_t> hist(kBins);
  for (std::size_t b = 0; b < kBins; ++b) hist[b] = sub[b] + sub[kBins + b] + sub[2 * kBins + b] + sub[3 * kBins + b];

  const double mean = total / n;
  const double var = std::max(0.0, total_sq / n - mean * mean);
  const double disc_mean = disc_n ? disc / disc_n : mean;
  const std::size_t ann_n = outer_n - disc_n;
  const double ann_mean = ann_n ? (outer - disc) / ann_n : mean;
  const double p5 = percentile_from_histogram(hist, static_cast<std::size_t>(n), 0.05);
  const double grad_pairs = s > 1 ? 2.0 * s * (s - 1) : 1.0;

  return {mean, std::sqrt(var), std::abs(disc_mean - ann_mean), mean - p5, grad / grad_pairs};
}

}  // namespace impactscan
