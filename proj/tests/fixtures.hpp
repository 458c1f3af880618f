#pragma once

#include <random>
#include <string>
#include <vector>

#include "impactscan/candidates.hpp"
#include "impactscan/scan.hpp"
#include "impactscan/time.hpp"

namespace testing {

inline constexpr double kMetersPerDegree = impactscan::kMarsRadiusM * 3.14159265358979323846 / 180.0;

// Observation metadata sized for rows x cols window positions at the default geometry.
inline impactscan::ObservationInfo grid_info(const std::string& id, const char* when, double lon, double lat,
                                             int rows = 1, int cols = 1, double dpp = 1e-4) {
  const int w = impactscan::kDefaultWindowSize + (cols - 1) * impactscan::kDefaultStride;
  const int h = impactscan::kDefaultWindowSize + (rows - 1) * impactscan::kDefaultStride;
  return {id, impactscan::parse_iso8601(when), w, h, impactscan::GeoTransform{lon, lat, dpp}};
}

inline impactscan::ScoreGrid grid_for(const impactscan::ObservationInfo& info, std::vector<float> values) {
  const int cols = impactscan::window_count(info.width, impactscan::kDefaultWindowSize, impactscan::kDefaultStride);
  const int rows = impactscan::window_count(info.height, impactscan::kDefaultWindowSize, impactscan::kDefaultStride);
  return {info.id, impactscan::kDefaultWindowSize, impactscan::kDefaultStride, rows, cols, std::move(values)};
}

struct RandomField {
  std::vector<impactscan::ObservationInfo> infos;
  std::vector<impactscan::ScoreGrid> grids;
  std::size_t windows = 0;
};

// n_obs overlapping observations of a small region with random scores, about
// n_obs * rows * cols windows in total.
inline RandomField random_field(int n_obs, int rows, int cols, std::uint64_t seed, double extent_deg = 0.2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, extent_deg);
  std::uniform_real_distribution<float> p(0.0f, 1.0f);
  std::uniform_int_distribution<int> day(1, 28);
  RandomField f;
  for (int i = 0; i < n_obs; ++i) {
    char id[32], when[16];
    std::snprintf(id, sizeof id, "obs%04d", i);
    std::snprintf(when, sizeof when, "20%02d-%02d-%02d", 8 + i % 10, 1 + i % 12, day(rng));
    f.infos.push_back(grid_info(id, when, 20.0 + pos(rng), 10.0 + pos(rng), rows, cols));
    std::vector<float> v(static_cast<std::size_t>(rows) * cols);
    for (auto& x : v) x = p(rng) < 0.3f ? 0.95f + 0.05f * p(rng) : p(rng);
    f.grids.push_back(grid_for(f.infos.back(), std::move(v)));
    f.windows += f.grids.back().values.size();
  }
  return f;
}

}  // namespace testing
