#include "impactscan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <climits>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "impactscan/error.hpp"
#include "impactscan/hash.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kKmPerDeg = kPi / 180.0 * kMarsRadiusM / 1000.0;

double unit_from_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::array<double, 3> unit_vector(LatLon p) {
  const double lat = p.lat * kPi / 180.0, lon = p.lon * kPi / 180.0;
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

// Sum of random plane waves restricted to the sphere; approximately N(0, 1).
double wave_field(const std::vector<std::array<double, 5>>& modes, LatLon p) {
  const auto x = unit_vector(p);
  double g = 0.0;
  for (const auto& m : modes) g += std::cos(m[3] * (m[0] * x[0] + m[1] * x[1] + m[2] * x[2]) + m[4]);
  return g * std::sqrt(2.0 / static_cast<double>(modes.size()));
}

std::vector<std::array<double, 5>> make_modes(std::mt19937_64& rng, int count, double frequency) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::array<double, 5>> modes;
  for (int i = 0; i < count; ++i) {
    double a = n01(rng), b = n01(rng), c = n01(rng);
    const double len = std::sqrt(a * a + b * b + c * c);
    modes.push_back({a / len, b / len, c / len, frequency * (0.5 + u(rng)), 2.0 * kPi * u(rng)});
  }
  return modes;
}

// Smooth lattice noise in [-1, 1], bilinear with smoothstep weights.
class ValueNoise {
 public:
  ValueNoise(std::uint64_t key, double cell_px) : key_(key), cell_(cell_px) {}

  // Adds amplitude * noise to a row-major image whose pixel (0, 0) sits at (row0, col0).
  void add_to(float* img, int width, int height, int row0, int col0, float amplitude) const {
    std::vector<std::int64_t> ix(width);
    std::vector<float> tx(width);
    for (int c = 0; c < width; ++c) {
      const double fx = (col0 + c) / cell_;
      ix[c] = static_cast<std::int64_t>(std::floor(fx));
      tx[c] = static_cast<float>(smooth(fx - static_cast<double>(ix[c])));
    }
    std::vector<float> top(width), bottom(width);
    std::int64_t cached_iy = INT64_MIN;
    for (int r = 0; r < height; ++r) {
      const double fy = (row0 + r) / cell_;
      const auto iy = static_cast<std::int64_t>(std::floor(fy));
      if (iy != cached_iy) {
        interpolate_row(ix, tx, iy, top);
        interpolate_row(ix, tx, iy + 1, bottom);
        cached_iy = iy;
      }
      const float ty = static_cast<float>(smooth(fy - static_cast<double>(iy)));
      float* out = img + static_cast<std::size_t>(r) * width;
      for (int c = 0; c < width; ++c) out[c] += amplitude * (top[c] + (bottom[c] - top[c]) * ty);
    }
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double lattice(std::int64_t x, std::int64_t y) const {
    const std::uint64_t h = mix64(key_ ^ mix64(static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL ^
                                               static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL));
    return 2.0 * unit_from_hash(h) - 1.0;
  }
  void interpolate_row(const std::vector<std::int64_t>& ix, const std::vector<float>& tx, std::int64_t iy,
                       std::vector<float>& out) const {
    std::int64_t cached = INT64_MIN;
    float v0 = 0.0f, v1 = 0.0f;
    for (std::size_t c = 0; c < ix.size(); ++c) {
      if (ix[c] != cached) {
        v0 = static_cast<float>(lattice(ix[c], iy));
        v1 = static_cast<float>(lattice(ix[c] + 1, iy));
        cached = ix[c];
      }
      out[c] = v0 + (v1 - v0) * tx[c];
    }
  }

  std::uint64_t key_;
  double cell_;
};

struct OldCrater {
  double row, col, radius, depth;
};

// Static terrain features keyed by the site; present in every observation.
std::vector<OldCrater> old_craters(std::uint64_t site_key, double mean_count, double height, double width) {
  std::mt19937_64 rng(mix64(site_key ^ 0x0c4a7e75ULL));
  std::poisson_distribution<int> count(mean_count);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<OldCrater> out;
  const int n = mean_count > 0.0 ? count(rng) : 0;
  for (int i = 0; i < n; ++i)
    out.push_back({u(rng) * height, u(rng) * width, 4.0 + 11.0 * u(rng), 0.02 + 0.06 * u(rng)});
  return out;
}

// Impact placed in local pixel coordinates of the image being rendered.
struct PlacedImpact {
  double row, col;
  const GroundTruthImpact* impact;
};

struct Scene {
  int width = 0;
  int height = 0;
  double base = 0.5;
  float texture_amplitude = 0.0f;
  float gain = 1.0f;
  float noise_sigma = 0.02f;
  std::uint64_t terrain_key = 0;
  std::uint64_t noise_key = 0;
  // Offset of image pixel (0, 0) in terrain coordinates.
  int terrain_row = 0;
  int terrain_col = 0;
  std::vector<OldCrater> craters;  // terrain coordinates
  std::vector<PlacedImpact> impacts;
};

void add_old_crater(std::vector<float>& img, int w, int h, const OldCrater& c) {
  const double reach = c.radius * 1.6;
  const int r0 = std::max(0, static_cast<int>(std::floor(c.row - reach)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(c.row + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(c.col - reach)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(c.col + reach)));
  for (int r = r0; r <= r1; ++r)
    for (int cc = c0; cc <= c1; ++cc) {
      const double d = std::hypot(r - c.row, cc - c.col) / c.radius;
      const double bowl = -c.depth * std::exp(-d * d * 2.0);
      const double rim = 0.6 * c.depth * std::exp(-(d - 1.0) * (d - 1.0) * 20.0);
      img[static_cast<std::size_t>(r) * w + cc] += static_cast<float>(bowl + rim);
    }
}

void add_impact(std::vector<float>& img, int w, int h, const PlacedImpact& p) {
  const auto& im = *p.impact;
  const double rad = im.radius_px;
  const double reach = 3.5 * rad;
  const int r0 = std::max(0, static_cast<int>(std::floor(p.row - reach)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(p.row + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(p.col - reach)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(p.col + reach)));
  if (r0 > r1 || c0 > c1) return;

  std::array<double, 8> ray_cos{}, ray_sin{};
  for (int k = 0; k < im.rays && k < 8; ++k) {
    const double theta = 2.0 * kPi * unit_from_hash(mix64(im.shape_key + static_cast<std::uint64_t>(k)));
    ray_cos[k] = std::cos(theta);
    ray_sin[k] = std::sin(theta);
  }
  const double sign = im.tone == Tone::light ? 1.0 : -1.0;
  const double c = im.contrast;
  const double pit = std::max(1.5, rad / 8.0);
  constexpr double kCut = 12.0;  // exp(-12) ~ 6e-6: beyond this a Gaussian term is dropped
  for (int r = r0; r <= r1; ++r) {
    for (int cc = c0; cc <= c1; ++cc) {
      const double dy = r - p.row, dx = cc - p.col;
      const double d2 = dx * dx + dy * dy;
      const double d = std::sqrt(d2);
      double v = 0.0;
      if (im.tone == Tone::dual) {
        const double q2 = d2 / (0.36 * rad * rad);
        const double ring = (d - rad) / (0.4 * rad);
        if (q2 < kCut) v -= c * std::exp(-q2);
        if (ring * ring < kCut) v += 0.5 * c * std::exp(-ring * ring);
      } else {
        const double q2 = d2 / (rad * rad);
        if (q2 < kCut) v = sign * c * std::exp(-q2);
      }
      const double pq2 = d2 / (pit * pit);
      if (pq2 < kCut) v -= 0.6 * c * std::exp(-pq2);
      for (int k = 0; k < im.rays && k < 8; ++k) {
        const double along = ray_cos[k] * dx + ray_sin[k] * dy;
        if (along < 0.5 * rad) continue;
        const double perp = -ray_sin[k] * dx + ray_cos[k] * dy;
        const double p2 = perp * perp / 2.25;
        if (p2 >= kCut) continue;
        v += sign * 0.5 * c * std::exp(-p2 - (along - 0.5 * rad) / (1.5 * rad));
      }
      if (v != 0.0) img[static_cast<std::size_t>(r) * w + cc] += static_cast<float>(v);
    }
  }
}

std::vector<float> render(const Scene& s) {
  std::vector<float> img(static_cast<std::size_t>(s.width) * s.height, 0.0f);
  const ValueNoise coarse(s.terrain_key, 48.0), fine(mix64(s.terrain_key), 12.0);
  coarse.add_to(img.data(), s.width, s.height, s.terrain_row, s.terrain_col, s.texture_amplitude);
  fine.add_to(img.data(), s.width, s.height, s.terrain_row, s.terrain_col, 0.5f * s.texture_amplitude);
  for (const auto& c : s.craters) {
    OldCrater local = c;
    local.row -= s.terrain_row;
    local.col -= s.terrain_col;
    add_old_crater(img, s.width, s.height, local);
  }
  for (const auto& p : s.impacts) add_impact(img, s.width, s.height, p);

  const float base = static_cast<float>(s.base) * s.gain;
  const double sqrt3 = std::sqrt(3.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint64_t h = mix64(s.noise_key ^ mix64(i));
    // Irwin-Hall(4) rescaled to unit variance.
    const auto quarters = static_cast<std::uint32_t>(h & 0xffff) + static_cast<std::uint32_t>((h >> 16) & 0xffff) +
                          static_cast<std::uint32_t>((h >> 32) & 0xffff) + static_cast<std::uint32_t>(h >> 48);
    const double u = static_cast<double>(quarters) / 65535.0;
    const float noise = static_cast<float>((u - 2.0) * sqrt3) * s.noise_sigma;
    const float v = std::clamp(base + img[i] + noise, 0.0f, 1.0f);
    img[i] = dequantize(static_cast<std::uint16_t>(static_cast<double>(v * 65535.0f) + 0.5), 65535);
  }
  return img;
}

double base_brightness(double ti, double ti_max) { return 0.62 - 0.28 * std::clamp(ti / ti_max, 0.0, 1.0); }

float texture_amplitude(const SyntheticWorldConfig& cfg, double ti) {
  const double t = std::clamp(ti / cfg.ti_max, 0.0, 1.0);
  return static_cast<float>(cfg.texture_amplitude_low_ti +
                            (cfg.texture_amplitude_high_ti - cfg.texture_amplitude_low_ti) * t);
}

double detectability(const SyntheticWorldConfig& cfg, double ti) {
  return 1.0 - (1.0 - cfg.contrast_floor) * std::clamp(ti / cfg.ti_max, 0.0, 1.0);
}

GroundTruthImpact draw_impact_shape(std::mt19937_64& rng, const SyntheticWorldConfig& cfg, double ti) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GroundTruthImpact im;
  im.ti = ti;
  im.contrast = cfg.contrast_max * (0.6 + 0.8 * u(rng)) * detectability(cfg, ti);
  im.radius_px = cfg.impact_radius_px_min + (cfg.impact_radius_px_max - cfg.impact_radius_px_min) * u(rng);
  const double t = u(rng);
  im.tone = t < 0.80 ? Tone::dark : (t < 0.88 ? Tone::light : Tone::dual);
  im.rays = static_cast<int>(u(rng) * 7.0);
  im.shape_key = rng();
  return im;
}

LatLon random_area_uniform(std::mt19937_64& rng, double lat_min, double lat_max) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s0 = std::sin(lat_min * kPi / 180.0), s1 = std::sin(lat_max * kPi / 180.0);
  return {std::asin(s0 + (s1 - s0) * u(rng)) * 180.0 / kPi, 360.0 * u(rng)};
}

}  // namespace

const char* to_string(Tone t) {
  switch (t) {
    case Tone::dark: return "dark";
    case Tone::light: return "light";
    case Tone::dual: return "dual";
  }
  return "dark";
}

Tone tone_from_string(const std::string& s) {
  if (s == "dark") return Tone::dark;
  if (s == "light") return Tone::light;
  if (s == "dual") return Tone::dual;
  throw ValidationError("tone", "unknown tone '" + s + "'");
}

void SyntheticWorldConfig::validate() const {
  if (site_count < 0) throw ValidationError("site_count", "must be nonnegative");
  if (!(lat_min >= -89.0 && lat_max <= 89.0 && lat_min < lat_max))
    throw ValidationError("lat_min", "latitude band must satisfy -89 <= lat_min < lat_max <= 89");
  if (window_size < 1 || stride < 1) throw ValidationError("window_size", "window size and stride must be positive");
  if (obs_width < window_size || obs_height < window_size)
    throw ValidationError("obs_width", "observations must hold at least one window");
  if ((obs_width - window_size) % stride != 0 || (obs_height - window_size) % stride != 0)
    throw ValidationError("obs_width", "observation dimensions must tile exactly with the window stride");
  if (!(deg_per_px > 0.0)) throw ValidationError("deg_per_px", "must be positive");
  if (max_jitter_px < 0 || 4 * max_jitter_px >= std::min(obs_width, obs_height))
    throw ValidationError("max_jitter_px", "out of range");
  if (min_repeats < 1 || max_repeats < min_repeats) throw ValidationError("min_repeats", "need 1 <= min <= max");
  if (!(mission_end > mission_start)) throw ValidationError("mission_end", "must follow mission_start");
  if (min_spacing_days < 0) throw ValidationError("min_spacing_days", "must be nonnegative");
  if (!(ti_max > 0.0 && ti_max <= 1200.0)) throw ValidationError("ti_max", "must lie in (0, 1200]");
  if (ti_modes < 1) throw ValidationError("ti_modes", "must be positive");
  if (!(ti_frequency > 0.0)) throw ValidationError("ti_frequency", "must be positive");
  if (!(impact_rate >= 0.0) || !std::isfinite(impact_rate)) throw ValidationError("impact_rate", "must be nonnegative");
  if (!(impact_radius_px_min > 0.0 && impact_radius_px_max >= impact_radius_px_min))
    throw ValidationError("impact_radius_px_min", "need 0 < min <= max");
  if (!(contrast_max >= 0.0 && contrast_max <= 1.0)) throw ValidationError("contrast_max", "must lie in [0, 1]");
  if (!(contrast_floor >= 0.0 && contrast_floor <= 1.0)) throw ValidationError("contrast_floor", "must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma", "must be nonnegative");
  if (!(old_craters_per_site >= 0.0)) throw ValidationError("old_craters_per_site", "must be nonnegative");
  if (!(primary_deg_per_px > 0.0 && fallback_deg_per_px > 0.0))
    throw ValidationError("primary_deg_per_px", "basemap resolutions must be positive");
  if (!(primary_gap_fraction >= 0.0 && primary_gap_fraction < 1.0))
    throw ValidationError("primary_gap_fraction", "must lie in [0, 1)");
}

SyntheticArchive::SyntheticArchive(SyntheticWorldConfig cfg) : cfg_(std::move(cfg)) {}

SyntheticArchive generate_synthetic_archive(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  SyntheticArchive w(cfg);
  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  w.ti_modes_ = make_modes(rng, cfg.ti_modes, cfg.ti_frequency);
  w.gap_modes_ = make_modes(rng, cfg.ti_modes, 3.0 * cfg.ti_frequency);

  const double height_deg = cfg.obs_height * cfg.deg_per_px;
  const double width_deg = cfg.obs_width * cfg.deg_per_px;
  const auto span = (cfg.mission_end - cfg.mission_start).count();
  const auto min_spacing = static_cast<std::int64_t>(cfg.min_spacing_days) * 86400;
  const int margin = cfg.max_jitter_px + 2;
  const double years = w.span_years();

  std::vector<std::pair<ObservationInfo, SyntheticArchive::ObsSpec>> obs;
  for (int s = 0; s < cfg.site_count; ++s) {
    const LatLon center = random_area_uniform(rng, cfg.lat_min + height_deg, cfg.lat_max - height_deg);
    SyntheticArchive::Site site;
    site.origin = {center.lat + height_deg / 2.0, normalize_lon(center.lon - width_deg / 2.0)};
    site.ti = w.ti_at(center);
    site.key = rng();

    const int repeats = cfg.min_repeats + static_cast<int>(u(rng) * (cfg.max_repeats - cfg.min_repeats + 1));
    std::vector<std::int64_t> times;
    for (int attempt = 0; attempt < 100; ++attempt) {
      times.clear();
      for (int k = 0; k < repeats; ++k) times.push_back(static_cast<std::int64_t>(u(rng) * static_cast<double>(span)));
      std::sort(times.begin(), times.end());
      bool spaced = true;
      for (std::size_t k = 1; k < times.size(); ++k) spaced = spaced && times[k] - times[k - 1] >= min_spacing;
      if (spaced) break;
    }
    for (int k = 0; k < repeats; ++k) {
      SyntheticArchive::ObsSpec spec;
      spec.site = s;
      spec.jitter_row = static_cast<int>(std::lround((2.0 * u(rng) - 1.0) * cfg.max_jitter_px));
      spec.jitter_col = static_cast<int>(std::lround((2.0 * u(rng) - 1.0) * cfg.max_jitter_px));
      spec.gain = static_cast<float>(0.95 + 0.1 * u(rng));
      spec.noise_key = rng();
      char id[32];
      std::snprintf(id, sizeof id, "S%05d_O%d", s, k + 1);
      ObservationInfo info{id, cfg.mission_start + std::chrono::seconds{times[k]}, cfg.obs_width, cfg.obs_height,
                           GeoTransform{site.origin.lon + spec.jitter_col * cfg.deg_per_px,
                                        site.origin.lat - spec.jitter_row * cfg.deg_per_px, cfg.deg_per_px}};
      obs.emplace_back(std::move(info), spec);
    }

    // Impacts over the inset footprint that every repeat observation covers.
    const double inset_h = (cfg.obs_height - 2 * margin) * cfg.deg_per_px;
    const double inset_w = (cfg.obs_width - 2 * margin) * cfg.deg_per_px;
    const double area_km2 = inset_h * kKmPerDeg * inset_w * kKmPerDeg * std::cos(center.lat * kPi / 180.0);
    const double lambda = cfg.impact_rate * area_km2 * years;
    const int count = lambda > 0.0 ? std::poisson_distribution<int>(lambda)(rng) : 0;
    for (int i = 0; i < count; ++i) {
      const double lr = margin + u(rng) * (cfg.obs_height - 2 * margin);
      const double lc = margin + u(rng) * (cfg.obs_width - 2 * margin);
      const LatLon at{site.origin.lat - lr * cfg.deg_per_px, normalize_lon(site.origin.lon + lc * cfg.deg_per_px)};
      const auto when = cfg.mission_start + std::chrono::seconds{static_cast<std::int64_t>(u(rng) * static_cast<double>(span))};
      GroundTruthImpact im = draw_impact_shape(rng, cfg, w.ti_at(at));
      im.id = static_cast<int>(w.truth_.size());
      im.site = s;
      im.lat = at.lat;
      im.lon = at.lon;
      im.time = when;
      w.truth_.push_back(im);
    }
    w.sites_.push_back(std::move(site));
  }

  std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first.id < b.first.id; });
  for (std::size_t i = 0; i < obs.size(); ++i) {
    w.sites_[obs[i].second.site].observations.push_back(i);
    w.infos_.push_back(std::move(obs[i].first));
    w.specs_.push_back(obs[i].second);
  }
  return w;
}

double SyntheticArchive::span_years() const {
  return static_cast<double>((cfg_.mission_end - cfg_.mission_start).count()) / (365.25 * 86400.0);
}

double SyntheticArchive::site_area_km2() const {
  const int margin = cfg_.max_jitter_px + 2;
  const double inset_h = (cfg_.obs_height - 2 * margin) * cfg_.deg_per_px;
  const double inset_w = (cfg_.obs_width - 2 * margin) * cfg_.deg_per_px;
  const double height_deg = cfg_.obs_height * cfg_.deg_per_px;
  double total = 0.0;
  for (const auto& s : sites_) {
    const double center_lat = s.origin.lat - height_deg / 2.0;
    total += inset_h * kKmPerDeg * inset_w * kKmPerDeg * std::cos(center_lat * kPi / 180.0);
  }
  return total;
}

double SyntheticArchive::ti_at(LatLon p) const { return cfg_.ti_max * normal_cdf(wave_field(ti_modes_, p)); }

Observation SyntheticArchive::load(const std::string& id) const {
  auto it = std::lower_bound(infos_.begin(), infos_.end(), id,
                             [](const ObservationInfo& o, const std::string& k) { return o.id < k; });
  if (it == infos_.end() || it->id != id) throw NotFoundError("unknown observation '" + id + "'");
  const auto idx = static_cast<std::size_t>(it - infos_.begin());
  const ObsSpec& spec = specs_[idx];
  const Site& site = sites_[spec.site];

  Scene scene;
  scene.width = it->width;
  scene.height = it->height;
  scene.base = base_brightness(site.ti, cfg_.ti_max);
  scene.texture_amplitude = texture_amplitude(cfg_, site.ti);
  scene.gain = spec.gain;
  scene.noise_sigma = static_cast<float>(cfg_.noise_sigma);
  scene.terrain_key = site.key;
  scene.noise_key = spec.noise_key;
  scene.terrain_row = spec.jitter_row;
  scene.terrain_col = spec.jitter_col;
  scene.craters = old_craters(site.key, cfg_.old_craters_per_site, cfg_.obs_height, cfg_.obs_width);
  for (const auto& im : truth_) {
    if (im.site != spec.site || !(im.time < it->acquired_at)) continue;
    const auto [r, c] = it->geo.geo_to_pixel({im.lat, im.lon});
    scene.impacts.push_back({r, c, &im});
  }
  return Observation{*it, render(scene)};
}

std::vector<LabeledWindow> SyntheticArchive::training_windows(int positives, int negatives, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int size = cfg_.window_size;
  const double half_stride = cfg_.stride / 2.0;
  std::vector<GroundTruthImpact> shapes;  // kept alive for the PlacedImpact pointers
  shapes.reserve(static_cast<std::size_t>(positives));
  std::vector<LabeledWindow> out;
  out.reserve(static_cast<std::size_t>(positives + negatives));
  for (int i = 0; i < positives + negatives; ++i) {
    const bool positive = i < positives;
    const LatLon at = random_area_uniform(rng, cfg_.lat_min, cfg_.lat_max);
    const double ti = ti_at(at);
    Scene scene;
    scene.width = scene.height = size;
    scene.base = base_brightness(ti, cfg_.ti_max);
    scene.texture_amplitude = texture_amplitude(cfg_, ti);
    scene.gain = static_cast<float>(0.95 + 0.1 * u(rng));
    scene.noise_sigma = static_cast<float>(cfg_.noise_sigma);
    scene.terrain_key = rng();
    scene.noise_key = rng();
    scene.craters = old_craters(scene.terrain_key, cfg_.old_craters_per_site * size * size /
                                                       (static_cast<double>(cfg_.obs_width) * cfg_.obs_height),
                                size, size);
    if (positive) {
      shapes.push_back(draw_impact_shape(rng, cfg_, ti));
      const double c = (size - 1) / 2.0;
      scene.impacts.push_back({c + (2.0 * u(rng) - 1.0) * half_stride, c + (2.0 * u(rng) - 1.0) * half_stride,
                               &shapes.back()});
    }
    out.push_back({size, render(scene), positive ? Label::positive : Label::negative});
  }
  return out;
}

ValueGrid SyntheticArchive::primary_ti_map() const {
  const double dpp = cfg_.primary_deg_per_px;
  const double top = std::min(90.0, cfg_.lat_max + 1.0), bottom = std::max(-90.0, cfg_.lat_min - 1.0);
  const int width = static_cast<int>(std::lround(360.0 / dpp));
  const int height = static_cast<int>(std::lround((top - bottom) / dpp));
  ValueGrid g{GeoTransform{dpp / 2.0, top - dpp / 2.0, dpp}, width, height, {}, std::nullopt, 0.0};
  g.values.resize(static_cast<std::size_t>(width) * height);
  const double gap_cut = cfg_.primary_gap_fraction;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const LatLon p = g.geo.pixel_to_geo(r, c);
      const bool gap = gap_cut > 0.0 && normal_cdf(wave_field(gap_modes_, p)) < gap_cut;
      g.values[static_cast<std::size_t>(r) * width + c] =
          gap ? std::numeric_limits<float>::quiet_NaN() : static_cast<float>(ti_at(p));
    }
  return g;
}

ValueGrid SyntheticArchive::fallback_ti_map() const {
  const double dpp = cfg_.fallback_deg_per_px;
  const int width = static_cast<int>(std::lround(360.0 / dpp));
  const int height = static_cast<int>(std::lround(180.0 / dpp));
  ValueGrid g{GeoTransform{dpp / 2.0, 90.0 - dpp / 2.0, dpp}, width, height, {}, std::nullopt, 0.0};
  g.values.resize(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      g.values[static_cast<std::size_t>(r) * width + c] = static_cast<float>(ti_at(g.geo.pixel_to_geo(r, c)));
  return g;
}

std::string ground_truth_to_jsonl(const std::vector<GroundTruthImpact>& truth, double deg_per_px) {
  std::string out;
  const double m_per_px = deg_per_px * kKmPerDeg * 1000.0;
  for (const auto& im : truth) {
    json j{{"id", im.id},
           {"site", im.site},
           {"lat", im.lat},
           {"lon", im.lon},
           {"time", format_iso8601(im.time)},
           {"contrast", im.contrast},
           {"ti", im.ti},
           {"radius_m", im.radius_px * m_per_px},
           {"tone", to_string(im.tone)}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<GroundTruthImpact> read_ground_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::vector<GroundTruthImpact> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      GroundTruthImpact im;
      im.id = j.value("id", static_cast<int>(out.size()));
      im.site = j.value("site", -1);
      im.lat = j.at("lat").get<double>();
      im.lon = j.at("lon").get<double>();
      im.time = parse_iso8601(j.at("time").get<std::string>());
      im.contrast = j.at("contrast").get<double>();
      im.ti = j.at("ti").get<double>();
      if (j.contains("tone")) im.tone = tone_from_string(j["tone"].get<std::string>());
      out.push_back(im);
    } catch (const json::exception& e) {
      throw ValidationError("truth", std::string("bad ground-truth line: ") + e.what());
    }
  }
  return out;
}

void write_synthetic_world(const fs::path& dir, const SyntheticArchive& world) {
  const fs::path archive = dir / "archive";
  fs::create_directories(archive);
  for (const auto& info : world.observations()) write_observation(archive, world.load(info.id));
  write_file_atomic(dir / "truth.jsonl", ground_truth_to_jsonl(world.ground_truth(), world.config().deg_per_px));
  const fs::path basemap = dir / "basemap";
  fs::create_directories(basemap);
  write_value_grid(basemap / "ti_primary.pgm", basemap / "ti_primary.json", world.primary_ti_map(), "ti_primary");
  write_value_grid(basemap / "ti_fallback.pgm", basemap / "ti_fallback.json", world.fallback_ti_map(), "ti_fallback");
}

}  // namespace impactscan
