#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "impactscan/archive.hpp"
#include "impactscan/calibration.hpp"
#include "impactscan/raster.hpp"
#include "impactscan/scorer.hpp"
#include "impactscan/tone.hpp"

namespace impactscan {

// Desk-scale stand-in for an orbital image archive. Sites are placed uniformly
// by area, each imaged several times; impacts occur uniformly in area and time,
// independent of terrain. Their blast-zone contrast falls with local thermal
// inertia, which is what makes confidence-ranked selections TI-biased.
struct SyntheticWorldConfig {
  std::uint64_t rng_seed = 7;

  // Sites
  int site_count = 400;
  double lat_min = -65.0;
  double lat_max = 65.0;
  int obs_width = 600;
  int obs_height = 450;
  double deg_per_px = 1e-4;  // ~5.9 m at the equator
  int window_size = kDefaultWindowSize;
  int stride = kDefaultStride;
  int max_jitter_px = 8;  // registration offset between repeat observations

  // Observation schedule
  int min_repeats = 2;
  int max_repeats = 3;
  Timestamp mission_start = Timestamp{std::chrono::seconds{1159315200}};  // 2006-09-27
  Timestamp mission_end = Timestamp{std::chrono::seconds{1575158400}};    // 2019-12-01
  int min_spacing_days = 30;

  // Thermal inertia field: smooth random field mapped onto [0, ti_max] tiu.
  double ti_max = 1100.0;
  int ti_modes = 48;
  double ti_frequency = 5.0;  // radians per unit chord; larger = rougher

  // Impacts per km^2 per year, constant and TI-independent.
  double impact_rate = 0.06;
  double impact_radius_px_min = 14.0;
  double impact_radius_px_max = 30.0;

  // Detectability: contrast = contrast_max * U(0.6, 1.4) * d(TI),
  // d(TI) = 1 - (1 - contrast_floor) * TI / ti_max.
  double contrast_max = 0.30;
  double contrast_floor = 0.15;

  // Background
  double noise_sigma = 0.02;
  double texture_amplitude_low_ti = 0.015;
  double texture_amplitude_high_ti = 0.045;
  double old_craters_per_site = 3.0;

  // Basemaps (primary is fine with gaps, fallback coarse and complete).
  double primary_deg_per_px = 0.25;
  double fallback_deg_per_px = 1.0;
  double primary_gap_fraction = 0.1;

  // Throws ValidationError naming the offending field.
  void validate() const;
};

struct GroundTruthImpact {
  int id = 0;
  int site = 0;
  double lat = 0.0;
  double lon = 0.0;
  Timestamp time;
  double contrast = 0.0;
  double ti = 0.0;
  double radius_px = 0.0;
  Tone tone = Tone::dark;
  int rays = 0;
  std::uint64_t shape_key = 0;
};

class SyntheticArchive final : public ObservationSource {
 public:
  const std::vector<ObservationInfo>& observations() const override { return infos_; }
  // Renders deterministically from the config; safe to call concurrently.
  Observation load(const std::string& id) const override;

  const SyntheticWorldConfig& config() const { return cfg_; }
  const std::vector<GroundTruthImpact>& ground_truth() const { return truth_; }
  // Total imaged area in km^2 and mission span in years (the Poisson exposure).
  double site_area_km2() const;
  double span_years() const;

  double ti_at(LatLon p) const;
  ValueGrid primary_ti_map() const;
  ValueGrid fallback_ti_map() const;

  struct Site {
    LatLon origin;  // upper-left pixel of the nominal footprint
    double ti = 0.0;
    std::uint64_t key = 0;
    std::vector<std::size_t> observations;  // indices into infos_ order
  };
  const std::vector<Site>& sites() const { return sites_; }

  // Seeded labeled windows drawn from the same world model: positives carry an
  // impact within stride/2 of the window center, negatives are plain terrain.
  std::vector<LabeledWindow> training_windows(int positives, int negatives, std::uint64_t seed) const;

 private:
  friend SyntheticArchive generate_synthetic_archive(const SyntheticWorldConfig& cfg);
  explicit SyntheticArchive(SyntheticWorldConfig cfg);

  struct ObsSpec {
    int site = 0;
    int jitter_row = 0;
    int jitter_col = 0;
    float gain = 1.0f;
    std::uint64_t noise_key = 0;
  };

  SyntheticWorldConfig cfg_;
  std::vector<Site> sites_;
  std::vector<ObservationInfo> infos_;  // sorted by id
  std::vector<ObsSpec> specs_;          // parallel to infos_
  std::vector<GroundTruthImpact> truth_;
  std::vector<std::array<double, 5>> ti_modes_;   // direction xyz, frequency, phase
  std::vector<std::array<double, 5>> gap_modes_;
};

SyntheticArchive generate_synthetic_archive(const SyntheticWorldConfig& cfg);

// Writes <dir>/archive/*, <dir>/truth.jsonl and <dir>/basemap/{ti_primary,ti_fallback}.{pgm,json}.
void write_synthetic_world(const std::filesystem::path& dir, const SyntheticArchive& world);

// One impact per line: {"id","lat","lon","time","contrast","ti","radius_m","tone"}.
std::string ground_truth_to_jsonl(const std::vector<GroundTruthImpact>& truth, double deg_per_px);
std::vector<GroundTruthImpact> read_ground_truth(const std::filesystem::path& path);

}  // namespace impactscan
