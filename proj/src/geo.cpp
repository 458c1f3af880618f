#include "impactscan/geo.hpp"

#include <cmath>
#include <numbers>

#include "impactscan/error.hpp"

namespace impactscan {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

double normalize_lon(double lon) {
  double l = std::fmod(lon, 360.0);
  if (l < 0.0) l += 360.0;
  if (l >= 360.0) l -= 360.0;
  return l;
}

double great_circle_distance(LatLon a, LatLon b, double radius_m) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double sdphi = std::sin((phi2 - phi1) / 2.0);
  const double sdlam = std::sin((b.lon - a.lon) * kDegToRad / 2.0);
  double h = sdphi * sdphi + std::cos(phi1) * std::cos(phi2) * sdlam * sdlam;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * radius_m * std::asin(std::sqrt(h));
}

GeoTransform::GeoTransform(double origin_lon, double origin_lat, double deg_per_px)
    : origin_lon_(normalize_lon(origin_lon)), origin_lat_(origin_lat), deg_per_px_(deg_per_px) {
  if (!std::isfinite(origin_lon)) throw ValidationError("origin_lon", "must be finite");
  if (!(origin_lat >= -90.0 && origin_lat <= 90.0)) throw ValidationError("origin_lat", "must lie in [-90, 90]");
  if (!(deg_per_px > 0.0) || !std::isfinite(deg_per_px)) throw ValidationError("deg_per_px", "must be positive");
}

LatLon GeoTransform::pixel_to_geo(double row, double col) const {
  return {origin_lat_ - row * deg_per_px_, normalize_lon(origin_lon_ + col * deg_per_px_)};
}

std::pair<double, double> GeoTransform::geo_to_pixel(LatLon p) const {
  double dlon = normalize_lon(p.lon - origin_lon_);
  if (dlon > 180.0) dlon -= 360.0;
  return {(origin_lat_ - p.lat) / deg_per_px_, dlon / deg_per_px_};
}

}  // namespace impactscan
