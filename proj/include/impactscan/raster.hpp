#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impactscan/geo.hpp"
#include "impactscan/time.hpp"

namespace impactscan {

inline constexpr int kDefaultWindowSize = 300;
inline constexpr int kDefaultStride = 75;

// Everything about an observation except its pixels.
struct ObservationInfo {
  std::string id;
  Timestamp acquired_at;
  int width = 0;
  int height = 0;
  GeoTransform geo;

  bool operator==(const ObservationInfo&) const = default;
};

struct WindowRef {
  std::string observation_id;
  int row_off = 0;
  int col_off = 0;
  int size = kDefaultWindowSize;

  bool operator==(const WindowRef&) const = default;
};

// Non-owning view of a square window inside a row-major image.
class WindowView {
 public:
  WindowView(const float* origin, std::ptrdiff_t row_stride, int size)
      : origin_(origin), row_stride_(row_stride), size_(size) {}

  int size() const { return size_; }
  std::ptrdiff_t row_stride() const { return row_stride_; }
  std::span<const float> row(int r) const {
    return {origin_ + r * row_stride_, static_cast<std::size_t>(size_)};
  }
  float at(int r, int c) const { return origin_[r * row_stride_ + c]; }

 private:
  const float* origin_;
  std::ptrdiff_t row_stride_;
  int size_;
};

// Grayscale image with intensities in [0, 1]. Immutable after construction.
class Observation {
 public:
  // Throws ValidationError on any broken invariant.
  Observation(ObservationInfo info, std::vector<float> pixels);

  const ObservationInfo& info() const { return info_; }
  const std::string& id() const { return info_.id; }
  int width() const { return info_.width; }
  int height() const { return info_.height; }
  std::span<const float> pixels() const { return pixels_; }
  float at(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * info_.width + col]; }

  // Throws ValidationError if the window is not fully inside this observation.
  WindowView window(const WindowRef& w) const;

  bool operator==(const Observation&) const = default;

 private:
  ObservationInfo info_;
  std::vector<float> pixels_;
};

// Windows on a regular grid at offsets {0, stride, 2*stride, ...}, row-major order.
std::vector<WindowRef> extract_windows(const ObservationInfo& obs, int size = kDefaultWindowSize,
                                       int stride = kDefaultStride);

// Number of window positions along one axis; 0 if the axis is shorter than the window.
int window_count(int extent, int size, int stride);

// Geographic position of the window's center pixel.
LatLon window_center_geo(const ObservationInfo& obs, const WindowRef& w);

// Physical-valued raster (basemaps: thermal inertia, dust cover, elevation).
struct ValueGrid {
  GeoTransform geo;
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::optional<double> nodata;
  // Values below this are treated as missing as well (negative TI is unphysical).
  std::optional<double> min_valid;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
  bool valid(int row, int col) const;
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height && col < width; }
  // Fractional (row, col) of a point. Columns are shifted by whole turns of
  // longitude when that brings them onto the grid, so grids spanning more
  // than 180 degrees resolve points on either side of the origin.
  std::pair<double, double> locate(LatLon p) const;
  // Nearest pixel center to a point, if it lies on the grid.
  std::optional<std::pair<int, int>> nearest_pixel(LatLon p) const;
};

// Throws ValidationError on inconsistent dimensions.
void validate(const ValueGrid& grid);

}  // namespace impactscan
