#pragma once

#include <utility>

namespace impactscan {

// IAU mean radius of Mars.
inline constexpr double kMarsRadiusM = 3'389'500.0;

struct LatLon {
  double lat = 0.0;  // degrees north
  double lon = 0.0;  // degrees east
};

// Maps any longitude into [0, 360).
double normalize_lon(double lon);

// Haversine distance on a sphere.
double great_circle_distance(LatLon a, LatLon b, double radius_m = kMarsRadiusM);

// Equirectangular, north-up, square pixels. Pixel indices address pixel
// centers: pixel (0, 0) sits exactly at the origin.
class GeoTransform {
 public:
  GeoTransform(double origin_lon, double origin_lat, double deg_per_px);

  double origin_lon() const { return origin_lon_; }
  double origin_lat() const { return origin_lat_; }
  double deg_per_px() const { return deg_per_px_; }

  LatLon pixel_to_geo(double row, double col) const;
  // Returns (row, col). Longitude differences are taken in (-180, 180].
  std::pair<double, double> geo_to_pixel(LatLon p) const;

  bool operator==(const GeoTransform&) const = default;

 private:
  double origin_lon_;
  double origin_lat_;
  double deg_per_px_;
};

}  // namespace impactscan
