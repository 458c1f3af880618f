#include "impactscan/raster.hpp"

#include <cmath>

#include "impactscan/error.hpp"

namespace impactscan {

Observation::Observation(ObservationInfo info, std::vector<float> pixels)
    : info_(std::move(info)), pixels_(std::move(pixels)) {
  if (info_.id.empty()) throw ValidationError("id", "must not be empty");
  if (info_.width < 1) throw ValidationError("width", "must be at least 1");
  if (info_.height < 1) throw ValidationError("height", "must be at least 1");
  if (pixels_.size() != static_cast<std::size_t>(info_.width) * static_cast<std::size_t>(info_.height))
    throw ValidationError("pixels", "pixel count does not equal width x height");
  for (float v : pixels_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("pixels", "intensities must lie in [0, 1]");
  }
}

WindowView Observation::window(const WindowRef& w) const {
  if (w.observation_id != info_.id) throw ValidationError("window", "belongs to observation '" + w.observation_id + "'");
  if (w.size < 1 || w.row_off < 0 || w.col_off < 0 || w.row_off + w.size > info_.height ||
      w.col_off + w.size > info_.width)
    throw ValidationError("window", "outside observation '" + info_.id + "'");
  return {pixels_.data() + static_cast<std::ptrdiff_t>(w.row_off) * info_.width + w.col_off, info_.width, w.size};
}

int window_count(int extent, int size, int stride) {
  if (size < 1) throw ValidationError("size", "must be at least 1");
  if (stride < 1) throw ValidationError("stride", "must be at least 1");
  if (extent < size) return 0;
  return (extent - size) / stride + 1;
}

std::vector<WindowRef> extract_windows(const ObservationInfo& obs, int size, int stride) {
  const int rows = window_count(obs.height, size, stride);
  const int cols = window_count(obs.width, size, stride);
  std::vector<WindowRef> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.push_back({obs.id, r * stride, c * stride, size});
  return out;
}

LatLon window_center_geo(const ObservationInfo& obs, const WindowRef& w) {
  if (w.observation_id != obs.id) throw ValidationError("window", "belongs to observation '" + w.observation_id + "'");
  if (w.size < 1 || w.row_off < 0 || w.col_off < 0 || w.row_off + w.size > obs.height ||
      w.col_off + w.size > obs.width)
    throw ValidationError("window", "outside observation '" + obs.id + "'");
  const double half = (w.size - 1) / 2.0;
  return obs.geo.pixel_to_geo(w.row_off + half, w.col_off + half);
}

bool ValueGrid::valid(int row, int col) const {
  if (!contains(row, col)) return false;
  const double v = at(row, col);
  if (!std::isfinite(v)) return false;
  if (nodata && v == *nodata) return false;
  if (min_valid && v < *min_valid) return false;
  return true;
}

std::pair<double, double> ValueGrid::locate(LatLon p) const {
  auto [r, c] = geo.geo_to_pixel(p);
  const double turn = 360.0 / geo.deg_per_px();
  const auto on_grid = [&](double x) { return x >= -0.5 && x < width - 0.5; };
  if (!on_grid(c)) {
    if (on_grid(c + turn))
      c += turn;
    else if (on_grid(c - turn))
      c -= turn;
  }
  return {r, c};
}

std::optional<std::pair<int, int>> ValueGrid::nearest_pixel(LatLon p) const {
  auto [r, c] = locate(p);
  const int row = static_cast<int>(std::floor(r + 0.5));
  const int col = static_cast<int>(std::floor(c + 0.5));
  if (!contains(row, col)) return std::nullopt;
  return std::pair{row, col};
}

void validate(const ValueGrid& grid) {
  if (grid.width < 1 || grid.height < 1) throw ValidationError("grid", "dimensions must be positive");
  if (grid.values.size() != static_cast<std::size_t>(grid.width) * grid.height)
    throw ValidationError("grid", "value count does not equal width x height");
}

}  // namespace impactscan
