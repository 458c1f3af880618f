#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "impactscan/archive.hpp"
#include "impactscan/scan.hpp"

namespace impactscan {

inline constexpr double kGroupingRadiusM = 600.0;
inline constexpr double kNonDetectionThreshold = 0.5;
inline constexpr double kDetectionThreshold = 0.95;

enum class TISource { primary, fallback, missing };
const char* to_string(TISource s);
TISource ti_source_from_string(const std::string& s);

struct CandidateMember {
  WindowRef window;
  Timestamp acquired_at;
  float p_pos = 0.0f;
  LatLon center;
};

struct Candidate {
  std::string id;
  LatLon seed;
  float confidence = 0.0f;
  // Sorted by (acquisition time, observation id, row, col); members[seed_index] is the seed.
  std::vector<CandidateMember> members;
  std::size_t seed_index = 0;
  std::optional<double> ti_value;
  TISource ti_source = TISource::missing;
  // Indices into members, set by apply_filters: latest non-detection before
  // the first detection, and that first detection.
  std::optional<std::size_t> before;
  std::optional<std::size_t> after;

  const CandidateMember& seed_member() const { return members[seed_index]; }
};

// Stable id: hash of the seed window's (observation id, row, col).
std::string candidate_id(const WindowRef& seed);

// Greedy seed-centered grouping over all windows in descending p_pos (ties by
// observation id, row, col). Each window joins exactly one candidate.
std::vector<Candidate> build_candidates(const std::vector<ScoreGrid>& grids, const ObservationSource& observations,
                                        double radius_m = kGroupingRadiusM);
std::vector<Candidate> build_candidates(const std::vector<ScoreGrid>& grids,
                                        const std::vector<ObservationInfo>& observations,
                                        double radius_m = kGroupingRadiusM);

struct TIBasemap {
  std::optional<ValueGrid> primary;
  std::optional<ValueGrid> fallback;

  // Throws ValidationError unless at least one grid is present and valid.
  void validate() const;
  // Loads <dir>/ti_primary.{pgm,png}+json and <dir>/ti_fallback.*; either may be absent.
  static TIBasemap load(const std::filesystem::path& dir);
};

struct TISample {
  std::optional<double> value;
  TISource source = TISource::missing;
};

// Nearest-pixel lookup in the primary grid, then the fallback.
TISample sample_ti(const TIBasemap& map, LatLon p);
void assign_ti(std::vector<Candidate>& cands, const TIBasemap& map);

// Mean of valid pixels whose centers fall inside the polygon (lat/lon vertices).
double sample_footprint_mean(const ValueGrid& grid, const std::vector<LatLon>& polygon);

struct FilterOptions {
  double lat_min = -60.0;
  double lat_max = 60.0;
  double nondetect_threshold = kNonDetectionThreshold;
  double detect_threshold = kDetectionThreshold;
};

// Keeps dateable candidates inside the latitude band and records before/after.
std::vector<Candidate> apply_filters(const std::vector<Candidate>& cands, const FilterOptions& opts = {});

// Bounds on formation time: (before, after] acquisition times. Uses the
// indices recorded by apply_filters when present, otherwise applies the same rule.
std::optional<std::pair<Timestamp, Timestamp>> formation_window(const Candidate& c, const FilterOptions& opts = {});

// Descending confidence, ties by id.
void sort_by_confidence(std::vector<Candidate>& cands);
std::vector<Candidate> top_k(std::vector<Candidate> cands, std::size_t k = 1000);

// Bin i is [edges[i], edges[i+1]); the last bin is open above.
struct TIBins {
  std::vector<double> edges;

  static TIBins uniform(double lo = 0.0, double hi = 1000.0, int count = 10);
  std::size_t count() const { return edges.size() - 1; }
  std::optional<std::size_t> bin(double ti) const;
  std::string label(std::size_t i) const;
  void validate() const;
};

std::vector<std::vector<Candidate>> stratified_top(const std::vector<Candidate>& cands, const TIBins& bins,
                                                   std::size_t per_bin = 100);
// Concatenation of the per-bin lists, re-sorted by confidence.
std::vector<Candidate> flatten(const std::vector<std::vector<Candidate>>& per_bin);

// JSON-lines with a schema header line.
std::string candidates_to_jsonl(const std::vector<Candidate>& cands);
std::vector<Candidate> candidates_from_jsonl(const std::string& text);
void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& cands);
std::vector<Candidate> read_candidates(const std::filesystem::path& path);

}  // namespace impactscan
